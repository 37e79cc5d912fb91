import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hpdro.thermal import (HouseSpec, ThermalState, build_affine_maps, simulate_fine, simulate_trajectory,
                           step_matrix, step_thermal)

from conftest import random_house

# house 1, (T, Tw) = (19, 42), x = 1, T_out = -5, dt = 1/12 h; 40-digit ODE integration
GOLDEN_STEP = (19.029148761735113, 42.077117887162336)


class TestHouseSpec:
    def test_rejects_nonpositive_parameter(self):
        with pytest.raises(ValueError, match="R must be positive"):
            HouseSpec(id=1, R=0.0, C=5, R_w=2, C_w=5, P_hp=5)

    def test_rejects_efficiency_above_one(self):
        with pytest.raises(ValueError, match="eff_w2h"):
            HouseSpec(id=1, R=3, C=5, R_w=2, C_w=5, P_hp=5, eff_w2h=1.2)

    def test_rejects_initial_temperature_outside_band(self):
        with pytest.raises(ValueError, match="T0"):
            HouseSpec(id=1, R=3, C=5, R_w=2, C_w=5, P_hp=5, T0=25.0)

    def test_rejects_empty_tank_band(self):
        with pytest.raises(ValueError, match="Tw_lo"):
            HouseSpec(id=1, R=3, C=5, R_w=2, C_w=5, P_hp=5, Tw_lo=45, Tw_hi=40)


class TestStepThermal:
    def test_global_equilibrium(self, house1):
        s = step_thermal(ThermalState(20.0, 20.0), 0, 20.0, house1, 1 / 12)
        assert s.T == pytest.approx(20.0, abs=1e-12)
        assert s.Tw == pytest.approx(20.0, abs=1e-12)

    def test_cold_outdoor_cools_house(self, house1):
        s = step_thermal(ThermalState(20.0, 20.0), 0, 0.0, house1, 1 / 12)
        assert s.T < 20.0
        assert s.Tw < 20.0 and s.Tw > s.T

    def test_golden_value(self, house1):
        s = step_thermal(ThermalState(19.0, 42.0), 1, -5.0, house1, 1 / 12)
        assert s.T == pytest.approx(GOLDEN_STEP[0], abs=1e-12)
        assert s.Tw == pytest.approx(GOLDEN_STEP[1], abs=1e-12)

    @pytest.mark.parametrize("bad", [(np.nan, 20.0, 0.0), (20.0, np.inf, 0.0), (20.0, 20.0, np.nan)])
    def test_non_finite_rejected(self, house1, bad):
        with pytest.raises(ValueError, match="non-finite"):
            step_thermal(ThermalState(bad[0], bad[1]), 0, bad[2], house1, 0.5)

    def test_non_binary_rejected(self, house1):
        with pytest.raises(ValueError):
            step_thermal(ThermalState(20, 40), 2, 0.0, house1, 0.5)

    def test_split_scheme_ignores_same_step_heating_indoors(self, house1):
        G = step_matrix(house1, 0.5, "split")
        assert G[0, 2] == 0.0
        assert G[1, 2] > 0.0

    def test_split_converges_to_exact(self, house1):
        gaps = [np.abs(step_matrix(house1, h, "split") - step_matrix(house1, h, "exact")).max()
                for h in (0.1, 0.05)]
        assert gaps[1] < gaps[0] / 3


class TestAffineMaps:
    def test_zero_horizon_rejected(self, house1):
        with pytest.raises(ValueError):
            build_affine_maps(house1, 0, 0.5)

    def test_single_step_matches_coefficients(self, house1):
        m = build_affine_maps(house1, 1, 1 / 12)
        G = step_matrix(house1, 1 / 12)
        assert m.J[0, 0] == G[0, 2] and m.K[0, 0] == G[0, 3]
        assert m.M[0, 0] == G[1, 2] and m.N[0, 0] == G[1, 3]
        assert m.l[0] == pytest.approx(G[0, 0] * house1.T0 + G[0, 1] * house1.Tw0, abs=1e-12)

    def test_zero_inputs_give_free_response(self, house1):
        m = build_affine_maps(house1, 24, 0.5)
        np.testing.assert_allclose(m.indoor(np.zeros(24), np.zeros(24)), m.l, atol=0)
        np.testing.assert_allclose(m.tank(np.zeros(24), np.zeros(24)), m.p, atol=0)

    @pytest.mark.parametrize("scheme", ["exact", "split"])
    def test_matches_recursion(self, scheme):
        rng = np.random.default_rng(3)
        for _ in range(100):
            h = random_house(rng)
            x = rng.integers(0, 2, 48)
            T_out = rng.uniform(-10, 5, 48)
            m = build_affine_maps(h, 48, 0.5, scheme)
            T, Tw = simulate_trajectory(h, x, T_out, 0.5, scheme)
            np.testing.assert_allclose(m.indoor(x, T_out), T[1:], rtol=0, atol=1e-9)
            np.testing.assert_allclose(m.tank(x, T_out), Tw[1:], rtol=0, atol=1e-9)

    def test_causal_and_nonnegative(self, ref_houses):
        for h in ref_houses:
            m = build_affine_maps(h, 48, 0.5)
            for mat in (m.J, m.K, m.M, m.N):
                assert np.all(np.triu(mat, 1) == 0)
                assert np.all(mat >= 0)

    def test_outdoor_row_sums_tend_to_one(self, house1):
        m = build_affine_maps(house1, 288, 5 / 60)
        rows = m.K.sum(axis=1)
        assert np.all(np.diff(rows) > 0)
        assert rows[-1] > 0.5 and rows[-1] < 1.0

    def test_csv_export(self, house1, tmp_path):
        m = build_affine_maps(house1, 3, 0.5)
        m.to_csv(tmp_path / "maps.csv")
        lines = (tmp_path / "maps.csv").read_text().splitlines()
        assert lines[0] == "block,row,col,value"
        assert sum(1 for ln in lines if ln.startswith("J,")) == 6


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), t=st.integers(0, 23))
    def test_monotone_in_schedule(self, seed, t):
        rng = np.random.default_rng(seed)
        h = random_house(rng)
        x = rng.integers(0, 2, 24)
        x[t] = 0
        T_out = rng.uniform(-10, 5, 24)
        T0, Tw0 = simulate_trajectory(h, x, T_out, 0.5)
        x[t] = 1
        T1, Tw1 = simulate_trajectory(h, x, T_out, 0.5)
        assert np.all(T1 >= T0 - 1e-12) and np.all(Tw1 >= Tw0 - 1e-12)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), t=st.integers(0, 23), bump=st.floats(0.1, 5.0))
    def test_causal_in_outdoor(self, seed, t, bump):
        rng = np.random.default_rng(seed)
        h = random_house(rng)
        x = rng.integers(0, 2, 24)
        T_out = rng.uniform(-10, 5, 24)
        Ta, Twa = simulate_trajectory(h, x, T_out, 0.5)
        T_out[t] += bump
        Tb, Twb = simulate_trajectory(h, x, T_out, 0.5)
        # state index t is the temperature before the input of step t acts
        np.testing.assert_array_equal(Ta[: t + 1], Tb[: t + 1])
        np.testing.assert_array_equal(Twa[: t + 1], Twb[: t + 1])
        assert np.all(Tb[t + 1:] > Ta[t + 1:])

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), c=st.floats(-10, 10))
    def test_free_response_approaches_constant_outdoor(self, seed, c):
        rng = np.random.default_rng(seed)
        h = random_house(rng, Tw0=float(rng.uniform(19, 21)))
        T, Tw = simulate_trajectory(h, np.zeros(400), np.full(400, c), 0.5)
        assert abs(T[-1] - c) < abs(T[0] - c)
        assert abs(T[-1] - c) < 0.05 * max(1.0, abs(T[0] - c))


class TestFineSimulation:
    def test_equilibrium_constant(self, house1):
        h = HouseSpec(id=1, R=2.8, C=5.4, R_w=2.2, C_w=4.9, P_hp=5, T0=20, Tw0=20)
        T, Tw = simulate_fine(h, np.zeros(12), np.full(12, 20.0), 0.5)
        np.testing.assert_allclose(T, 20.0, atol=1e-12)
        np.testing.assert_allclose(Tw, 20.0, atol=1e-12)

    def test_exact_fine_equals_coarse_exact(self, house1):
        rng = np.random.default_rng(0)
        x = rng.integers(0, 2, 288)
        T_out = rng.uniform(-8, 2, 288)
        Tf, Twf = simulate_fine(house1, x, T_out, 5 / 60, 5.0)
        Tc, Twc = simulate_trajectory(house1, x, T_out, 5 / 60)
        np.testing.assert_allclose(Tf, Tc, atol=1e-9)
        np.testing.assert_allclose(Twf, Twc, atol=1e-9)

    def test_euler_five_seconds_within_tolerance(self, ref_houses):
        rng = np.random.default_rng(1)
        for h in ref_houses:
            x = rng.integers(0, 2, 288)
            T_out = rng.uniform(-8, 2, 288)
            Tf, _ = simulate_fine(h, x, T_out, 5 / 60, 5.0, method="euler")
            Tc, _ = simulate_trajectory(h, x, T_out, 5 / 60)
            assert np.abs(Tf - Tc).max() < 0.05

    def test_euler_first_order(self, house1):
        rng = np.random.default_rng(2)
        x = rng.integers(0, 2, 48)
        T_out = rng.uniform(-8, 2, 48)
        Tc, _ = simulate_trajectory(house1, x, T_out, 0.5)
        errs = [np.abs(simulate_fine(house1, x, T_out, 0.5, fd, method="euler")[0] - Tc).max()
                for fd in (5.0, 10.0, 20.0, 40.0)]
        # first order: each doubling multiplies the error by 2 (1 + O(h))
        for a, b in zip(errs, errs[1:]):
            assert 1.9 * a < b <= 2.0 * a * (1 + 2e-3)

    def test_fine_step_not_shorter_than_slot_rejected(self, house1):
        with pytest.raises(ValueError, match="shorter"):
            simulate_fine(house1, [0, 1], [0.0, 0.0], 5 / 60, 300.0)

    def test_non_dividing_step_rejected(self, house1):
        with pytest.raises(ValueError, match="divide"):
            simulate_fine(house1, [0, 1], [0.0, 0.0], 5 / 60, 7.0)
