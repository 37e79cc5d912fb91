"""Open-loop Monte Carlo replay of day-ahead schedules against a fine-step plant."""

from __future__ import annotations

import zlib
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .model import ForecastSet, ZoneSpec
from .thermal import HouseSpec, simulate_fine_batch, step_matrix
from .uncertainty import GaussianModel

CHI2_DF = 5


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named consumer of the master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_power_errors(trials: int, H: int, seed) -> np.ndarray:
    """Power forecast errors ``-0.15 * chi2(5) + 0.75`` (kW), shape (trials, H)."""
    if trials < 1 or H < 1:
        raise ValueError(f"trials and H must be >= 1, got {trials}, {H}")
    return -0.15 * _rng(seed).chisquare(CHI2_DF, size=(trials, H)) + 0.75


def sample_temp_errors(trials: int, H: int, models: Sequence[GaussianModel], seed) -> np.ndarray:
    """Independent normal outdoor-temperature errors per slot, shape (trials, H)."""
    if trials < 1 or H < 1:
        raise ValueError(f"trials and H must be >= 1, got {trials}, {H}")
    if len(models) != H:
        raise ValueError(f"expected {H} per-slot models, got {len(models)}")
    mu = np.array([m.mu for m in models])
    sigma = np.array([m.sigma for m in models])
    return mu + sigma * _rng(seed).standard_normal((trials, H))


@dataclass(frozen=True)
class ScenarioSet:
    """Monte Carlo realisations: temperature errors (trials x H, degC) and
    power errors per zone (trials x H, kW)."""

    temp_errors: np.ndarray
    power_errors: Mapping[str, np.ndarray]
    seed: int | None = None

    def __post_init__(self):
        te = np.atleast_2d(np.asarray(self.temp_errors, float))
        pe = {z: np.atleast_2d(np.asarray(v, float)) for z, v in self.power_errors.items()}
        for z, v in pe.items():
            if v.shape != te.shape:
                raise ValueError(f"power errors for zone {z} have shape {v.shape}, expected {te.shape}")
        object.__setattr__(self, "temp_errors", te)
        object.__setattr__(self, "power_errors", pe)

    @property
    def trials(self) -> int:
        return self.temp_errors.shape[0]

    @property
    def H(self) -> int:
        return self.temp_errors.shape[1]

    @classmethod
    def generate(cls, trials: int, H: int, temp_models: Sequence[GaussianModel],
                 zones: Sequence[ZoneSpec], seed: int) -> "ScenarioSet":
        temp = sample_temp_errors(trials, H, temp_models, substream(seed, "scenario/temperature"))
        power = {z.id: sample_power_errors(trials, H, substream(seed, f"scenario/power/{z.id}"))
                 for z in zones}
        return cls(temp, power, seed)

    @classmethod
    def zeros(cls, H: int, zones: Sequence[ZoneSpec], trials: int = 1) -> "ScenarioSet":
        return cls(np.zeros((trials, H)), {z.id: np.zeros((trials, H)) for z in zones}, None)


def hysteresis_baseline(houses: Sequence[HouseSpec], T_out, H: int, dt: float) -> np.ndarray:
    """Unscheduled tank thermostat: ON once the tank falls to its lower bound,
    OFF once it reaches its upper bound, otherwise hold.

    ``T_out`` of shape (H,) gives a (houses, H) schedule; shape (trials, H)
    gives one schedule per realisation, (trials, houses, H). A pump starts ON
    only if the initial tank temperature is already at or below its bound.
    """
    T_out = np.asarray(T_out, float)
    single = T_out.ndim == 1
    T_out = np.atleast_2d(T_out)
    if T_out.shape[1] != H:
        raise ValueError(f"outdoor profile length {T_out.shape[1]} != H={H}")
    for h in houses:
        if not h.Tw_lo < h.Tw_hi:
            raise ValueError(f"house {h.id}: tank band [{h.Tw_lo}, {h.Tw_hi}] is empty")
    trials = T_out.shape[0]
    G = np.stack([step_matrix(h, dt, "exact") for h in houses])  # (houses, 2, 4)
    lo = np.array([h.Tw_lo for h in houses])
    hi = np.array([h.Tw_hi for h in houses])
    T = np.tile([h.T0 for h in houses], (trials, 1))
    Tw = np.tile([h.Tw0 for h in houses], (trials, 1))
    x = np.zeros((trials, len(houses), H))
    on = Tw <= lo
    for t in range(H):
        x[:, :, t] = on
        To = T_out[:, t:t + 1]
        T, Tw = (G[:, 0, 0] * T + G[:, 0, 1] * Tw + G[:, 0, 2] * on + G[:, 0, 3] * To,
                 G[:, 1, 0] * T + G[:, 1, 1] * Tw + G[:, 1, 2] * on + G[:, 1, 3] * To)
        on = np.where(on, Tw < hi, Tw <= lo)
    return x[0] if single else x


def comfort_rate(T, T_lo, T_hi, tol: float = 1e-6) -> np.ndarray | float:
    """Worst-house fraction of slots inside the comfort band.

    ``T`` has shape (..., houses, H); bounds are per house. The tolerance
    absorbs round-off for trajectories that ride a bound exactly.
    """
    T = np.asarray(T, float)
    lo = np.asarray(T_lo, float)[:, None]
    hi = np.asarray(T_hi, float)[:, None]
    inside = (T >= lo - tol) & (T <= hi + tol)
    rate = inside.mean(axis=-1).min(axis=-1)
    return float(rate) if np.ndim(rate) == 0 else rate


_METRICS = ("P_max", "peak_cost", "elec_cost", "comfort")


@dataclass(frozen=True)
class EvaluationReport:
    """Per-trial outcomes; ``P_max`` and ``peak_cost`` summed over zones."""

    P_max: np.ndarray
    peak_cost: np.ndarray
    elec_cost: np.ndarray
    comfort: np.ndarray
    label: str = ""
    trajectories: np.ndarray | None = field(default=None, repr=False)

    @property
    def trials(self) -> int:
        return self.P_max.size

    def summary(self) -> dict[str, dict[str, float]]:
        """Best, worst, mean and standard error per metric, each chosen independently."""
        out = {}
        for name in _METRICS:
            v = getattr(self, name)
            best, worst = (v.max(), v.min()) if name == "comfort" else (v.min(), v.max())
            se = v.std(ddof=1) / np.sqrt(v.size) if v.size > 1 else 0.0
            out[name] = {"best": float(best), "worst": float(worst), "mean": float(v.mean()), "se": float(se)}
        return out

    def rows(self):
        for i in range(self.trials):
            yield i, *(float(getattr(self, m)[i]) for m in _METRICS)


def monte_carlo_evaluate(x, houses: Sequence[HouseSpec], zones: Sequence[ZoneSpec],
                         forecast: ForecastSet, scenarios: ScenarioSet, fine_dt: float = 5.0,
                         method: str = "exact", keep_trajectories: bool = False,
                         label: str = "") -> EvaluationReport:
    """Replay a fixed schedule under every scenario.

    ``x`` is (houses, H), or (trials, houses, H) for schedules that react to
    the realisation (the hysteresis baseline).
    """
    houses = list(houses)
    x = np.asarray(x, float)
    H = forecast.H
    if x.shape[-2:] != (len(houses), H):
        raise ValueError(f"schedule shape {x.shape} does not match {len(houses)} houses x {H} slots")
    if scenarios.H != H:
        raise ValueError(f"scenarios cover {scenarios.H} slots, forecast has {H}")
    if x.ndim == 3 and x.shape[0] != scenarios.trials:
        raise ValueError(f"{x.shape[0]} schedules for {scenarios.trials} trials")
    missing = [z.id for z in zones if z.id not in scenarios.power_errors]
    if missing:
        raise ValueError(f"no power errors for zones {missing}")

    T_real = forecast.T_out_hat + scenarios.temp_errors
    T, _ = simulate_fine_batch(houses, x, T_real, forecast.dt, fine_dt, method)
    T_slots = T[:, :, 1:]
    comfort = comfort_rate(T_slots, [h.T_lo for h in houses], [h.T_hi for h in houses])

    p_hp = np.array([h.P_hp for h in houses])
    hp_power = np.einsum("k,...kt->...t", p_hp, x)  # (H,) or (trials, H)
    elec = np.broadcast_to(hp_power @ forecast.price * forecast.dt, (scenarios.trials,)).astype(float)

    pos = {h.id: k for k, h in enumerate(houses)}
    p_max = np.zeros(scenarios.trials)
    peak_cost = np.zeros(scenarios.trials)
    for z in zones:
        idx = [pos[i] for i in z.houses]
        zone_hp = np.einsum("k,...kt->...t", p_hp[idx], x[..., idx, :])
        trans = zone_hp + forecast.P_sum_hat[z.id] + scenarios.power_errors[z.id]
        zmax = trans.max(axis=1)
        p_max += zmax
        peak_cost += z.psi * zmax
    return EvaluationReport(p_max, peak_cost, elec, np.atleast_1d(comfort).astype(float), label,
                            T if keep_trajectories else None)


def evaluate_baseline(houses: Sequence[HouseSpec], zones: Sequence[ZoneSpec], forecast: ForecastSet,
                      scenarios: ScenarioSet, fine_dt: float = 5.0, method: str = "exact",
                      keep_trajectories: bool = False) -> EvaluationReport:
    """Hysteresis baseline, re-run against each realised outdoor profile."""
    T_real = forecast.T_out_hat + scenarios.temp_errors
    x = hysteresis_baseline(houses, T_real, forecast.H, forecast.dt)
    return monte_carlo_evaluate(x, houses, zones, forecast, scenarios, fine_dt, method,
                                keep_trajectories, label="unscheduled")


def plot_data(x, houses: Sequence[HouseSpec], zones: Sequence[ZoneSpec], forecast: ForecastSet,
              fine_dt: float = 5.0) -> dict[str, np.ndarray]:
    """Per-slot series for external plotting: forecast transformer load per
    zone, heat-pump load, price, and indoor temperature per house (nominal
    outdoor profile)."""
    houses = list(houses)
    x = np.asarray(x, float)
    p_hp = np.array([h.P_hp for h in houses])
    pos = {h.id: k for k, h in enumerate(houses)}
    T, _ = simulate_fine_batch(houses, x, forecast.T_out_hat, forecast.dt, fine_dt)
    out = {"slot": np.arange(forecast.H), "price": forecast.price, "T_out": forecast.T_out_hat,
           "hp_power": p_hp @ x}
    for z in zones:
        idx = [pos[i] for i in z.houses]
        out[f"trans_{z.id}"] = p_hp[idx] @ x[idx] + forecast.P_sum_hat[z.id]
    for k, h in enumerate(houses):
        out[f"T_{h.id}"] = T[0, k, 1:]
    return out
