import itertools
import logging
import time

import highspy
import numpy as np
import pytest

from hpdro.io import parse_configs, read_manifest
from hpdro.model import MilpInstance, validate_schedule
from hpdro.pipeline import build_instance, compute_margins
from hpdro.solver import BnbConfig, enumerate_small, export_mps, solve_lp, solve_milp
from hpdro.solver.bnb import _rel_gap
from hpdro.solver.lp import DualSimplex, row_bounds
from hpdro.solver.mps import mps_names

from conftest import DESK_MANIFEST, tiny_instances

TINY = tiny_instances(seed=2024, count=50)


def vertex_lp(c, A, b, ub):
    """min c.x s.t. A x <= b, 0 <= x <= ub by enumerating every basic solution."""
    n = len(c)
    G = np.vstack([A, np.eye(n), -np.eye(n)])
    h = np.concatenate([b, ub, np.zeros(n)])
    best = np.inf
    for S in itertools.combinations(range(len(h)), n):
        M = G[list(S)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, h[list(S)])
        if np.all(G @ x <= h + 1e-9):
            best = min(best, float(c @ x))
    return best


def highs_objective(path):
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("mip_rel_gap", 0.0)
    assert h.readModel(str(path)) == highspy.HighsStatus.kOk
    h.run()
    return h.getModelStatus(), h.getInfo().objective_function_value


class TestLp:
    def test_single_variable(self):
        inst = MilpInstance(c=[-1.0], A=np.zeros((0, 1)), sense=[], rhs=[], lb=[0], ub=[1], integer=[False])
        sol = solve_lp(inst)
        assert sol.status == "optimal" and sol.values[0] == 1.0 and sol.objective == -1.0

    def test_infeasible(self):
        inst = MilpInstance(c=[1.0, 1.0], A=[[1, 1]], sense=["G"], rhs=[3.0], lb=[0, 0], ub=[1, 1],
                            integer=[False, False])
        assert solve_lp(inst).status == "infeasible"

    @pytest.mark.parametrize("seed", range(40))
    def test_against_vertex_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        n, m = int(rng.integers(2, 5)), int(rng.integers(1, 6))
        A = rng.normal(0, 1, (m, n))
        x0 = rng.uniform(0, 1, n)
        b = A @ x0 + rng.uniform(0, 1, m)
        ub = rng.uniform(1, 3, n)
        c = rng.normal(0, 1, n)
        inst = MilpInstance(c=c, A=A, sense=["L"] * m, rhs=b, lb=np.zeros(n), ub=ub, integer=np.zeros(n, bool))
        sol = solve_lp(inst)
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(vertex_lp(c, A, b, ub), abs=1e-8)
        assert np.all(A @ sol.values <= b + 1e-8)

    def test_relaxation_bounds_milp(self):
        for inst in TINY[:20]:
            lp = solve_lp(inst)
            exact = enumerate_small(inst)
            if exact.status == "optimal":
                assert lp.objective <= exact.objective_value + 1e-9

    def test_against_highs_on_scheduling_relaxation(self, tmp_path):
        inst = TINY[3]
        relaxed = MilpInstance(c=inst.c, A=inst.A, sense=inst.sense, rhs=inst.rhs, lb=inst.lb, ub=inst.ub,
                               integer=np.zeros(inst.n_vars, bool))
        export_mps(relaxed, tmp_path / "lp.mps")
        status, obj = highs_objective(tmp_path / "lp.mps")
        assert solve_lp(inst).objective == pytest.approx(obj, rel=1e-9, abs=1e-9)

    def test_warm_start_after_bound_change(self):
        inst = TINY[5]
        lo, hi = row_bounds(inst.sense, inst.rhs)
        ds = DualSimplex(inst.A, lo, hi, inst.c)
        ds.load(inst.lb, inst.ub)
        ds.solve()
        ub = inst.ub.copy()
        ub[0] = 0.0
        ds.set_bounds(0, 0.0, 0.0)
        warm = ds.solve()
        cold = solve_lp(inst, ub=ub)
        assert warm.status == cold.status
        if cold.status == "optimal":
            assert warm.objective == pytest.approx(cold.objective, abs=1e-9)


class TestBranchAndBound:
    @pytest.mark.parametrize("k", range(50))
    def test_matches_enumeration(self, k):
        inst = TINY[k]
        exact = enumerate_small(inst)
        sol = solve_milp(inst, BnbConfig(gap_tol=0.0))
        assert sol.status == exact.status
        if exact.status == "optimal":
            assert sol.objective_value == exact.objective_value
            assert validate_schedule(sol.values, inst) == []

    @pytest.mark.parametrize("heuristics", ["rounding", "full"])
    def test_heuristic_settings_agree(self, heuristics):
        inst = TINY[10]
        exact = enumerate_small(inst)
        sol = solve_milp(inst, BnbConfig(gap_tol=0.0, heuristics=heuristics))
        assert sol.objective_value == pytest.approx(exact.objective_value, abs=1e-9)

    def test_integral_relaxation_needs_no_branching(self):
        inst = MilpInstance(c=[1.0, 2.0], A=[[1, 1]], sense=["G"], rhs=[1.0], lb=[0, 0], ub=[1, 1],
                            integer=[True, True])
        sol = solve_milp(inst, BnbConfig(gap_tol=0.0))
        assert sol.status == "optimal" and sol.gap == 0.0 and sol.nodes == 1
        assert sol.values.tolist() == [1.0, 0.0]

    def test_infeasible_root(self):
        inst = MilpInstance(c=[1.0], A=[[1.0]], sense=["G"], rhs=[2.0], lb=[0], ub=[1], integer=[True])
        assert solve_milp(inst).status == "infeasible"
        assert enumerate_small(inst).status == "infeasible"

    def test_single_binary_oracle(self):
        inst = MilpInstance(c=[1.0], A=[[1.0]], sense=["G"], rhs=[0.0], lb=[0], ub=[1], integer=[True])
        assert enumerate_small(inst).values.tolist() == [0.0]
        inst = MilpInstance(c=[1.0], A=[[1.0]], sense=["G"], rhs=[1.0], lb=[0], ub=[1], integer=[True])
        assert enumerate_small(inst).values.tolist() == [1.0]

    def test_enumeration_limit(self):
        inst = MilpInstance(c=np.ones(23), A=np.zeros((0, 23)), sense=[], rhs=[], lb=np.zeros(23),
                            ub=np.ones(23), integer=np.ones(23, bool))
        with pytest.raises(ValueError, match="exceed"):
            enumerate_small(inst)

    def test_bounds_and_gap_certificate(self):
        for inst in TINY[:15]:
            record = []
            sol = solve_milp(inst, BnbConfig(gap_tol=0.01), record=record)
            if sol.status == "infeasible":
                continue
            root = solve_lp(inst).objective
            assert root <= sol.objective_value + 1e-9
            assert sol.bound <= sol.objective_value + 1e-9
            assert _rel_gap(sol.objective_value, sol.bound) <= 0.01
            incumbents = [r[2] for r in record if np.isfinite(r[2])]
            assert all(a >= b - 1e-12 for a, b in zip(incumbents, incumbents[1:]))

    def test_deterministic(self):
        inst = TINY[7]
        a = solve_milp(inst, BnbConfig(gap_tol=0.0))
        b = solve_milp(inst, BnbConfig(gap_tol=0.0))
        assert a.nodes == b.nodes and np.array_equal(a.values, b.values)

    def test_node_limit_without_incumbent_is_timeout(self):
        # 2 (x1 + x2 + x3) = 3 has a fractional relaxation and no integer point
        inst = MilpInstance(c=[1.0, 1.0, 1.0], A=[[2, 2, 2]], sense=["E"], rhs=[3.0], lb=[0, 0, 0],
                            ub=[1, 1, 1], integer=[True] * 3)
        sol = solve_milp(inst, BnbConfig(node_limit=1))
        assert sol.status == "timeout" and sol.x is None and sol.values is None
        assert solve_milp(inst).status == "infeasible"

    def test_log_format(self, caplog):
        with caplog.at_level(logging.INFO, logger="hpdro.solver.bnb"):
            solve_milp(TINY[1], BnbConfig(gap_tol=0.0))
        lines = [r.getMessage() for r in caplog.records if r.getMessage().startswith("node=")]
        assert lines
        keys = [kv.split("=")[0] for kv in lines[-1].split()]
        assert keys == ["node", "bound", "incumbent", "gap"]

    @pytest.mark.parametrize("bad", [dict(gap_tol=-1), dict(heuristics="none"), dict(branching="random")])
    def test_config_validation(self, bad):
        with pytest.raises(ValueError):
            BnbConfig(**bad)


class TestMps:
    @pytest.mark.parametrize("k", range(5))
    def test_round_trip_through_highs(self, tmp_path, k):
        inst = TINY[k]
        exact = enumerate_small(inst)
        export_mps(inst, tmp_path / "m.mps")
        status, obj = highs_objective(tmp_path / "m.mps")
        if exact.status == "infeasible":
            assert status == highspy.HighsModelStatus.kInfeasible
        else:
            assert status == highspy.HighsModelStatus.kOptimal
            assert obj == pytest.approx(exact.objective_value, rel=1e-9, abs=1e-9)

    def test_binary_count_and_row_names(self, tmp_path):
        inst = TINY[2]
        text = export_mps(inst, tmp_path / "m.mps").read_text()
        rows, cols = mps_names(inst)
        assert len(cols) == inst.n_vars and len(set(cols)) == inst.n_vars
        assert len(set(rows)) == inst.n_rows and all(len(r) <= 8 for r in rows)
        # binaries are written between the integer markers
        body = text.split("COLUMNS")[1].split("RHS")[0]
        ints = body.split("'INTORG'")[1].split("'INTEND'")[0]
        names = {ln.split()[0] for ln in ints.strip().splitlines() if "MARKER" not in ln}
        assert len(names) == len(inst.houses) * inst.H
        # provenance of every shortened row is kept in a comment line
        for full, short in zip(inst.row_names, rows):
            assert full == short or f"* ROW {short} {full}" in text

    def test_empty_constraint_set(self, tmp_path):
        inst = MilpInstance(c=[1.0, -1.0], A=np.zeros((0, 2)), sense=[], rhs=[], lb=[0, 0], ub=[1, 1],
                            integer=[True, False])
        text = export_mps(inst, tmp_path / "e.mps").read_text()
        assert text.split("ROWS")[1].split("COLUMNS")[0].split() == ["N", "COST"]
        status, obj = highs_objective(tmp_path / "e.mps")
        assert obj == pytest.approx(-1.0)


@pytest.mark.slow
class TestDeskScale:
    def test_one_percent_gap_within_a_minute(self):
        inputs = parse_configs(read_manifest(DESK_MANIFEST))
        inst = build_instance(inputs, compute_margins(inputs, "kdea-dro", 0.1, 0.1))
        t0 = time.perf_counter()
        sol = solve_milp(inst, BnbConfig(gap_tol=0.01, time_limit=60.0))
        elapsed = time.perf_counter() - t0
        assert sol.x is not None and validate_schedule(sol.values, inst) == []
        assert elapsed < 65.0
        assert sol.status in ("optimal", "gap-feasible"), f"gap {sol.gap:.4f} after {sol.nodes} nodes"
