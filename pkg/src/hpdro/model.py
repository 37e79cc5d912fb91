"""MILP assembly for the day-ahead heat-pump schedule.

All four variants (deterministic, KDE-DRO, Gaussian-DRO, interval RO) share
one variable catalogue and one constraint matrix. Uncertainty only enters
as constant shifts of the forecasts, i.e. through right-hand sides:

* peak rows: net zonal load forecast + power margin
* upper comfort rows: outdoor forecast + upper temperature margin
* lower comfort and water-hold rows: outdoor forecast - lower temperature margin

Variables: ``x[k, t]`` (binary, house-major) followed by one ``P_max`` per zone.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .thermal import HouseSpec, Scheme, build_affine_maps
from .uncertainty import dro_margin

ROW_TAGS = ("peak", "capacity", "comfort_hi", "comfort_lo", "water_hold", "switch_hi", "switch_lo")
VARIANTS = ("deterministic", "kdea-dro", "ga-dro", "ro")


class InfeasibleModelError(ValueError):
    """Raised when a model is provably infeasible before any solve."""

    def __init__(self, message: str, tag: str, house=None, slot=None):
        super().__init__(message)
        self.tag = tag
        self.house = house
        self.slot = slot


@dataclass(frozen=True)
class ZoneSpec:
    id: str
    houses: tuple
    trans_capacity: float
    psi: float

    def __post_init__(self):
        object.__setattr__(self, "houses", tuple(self.houses))
        if not self.houses:
            raise ValueError(f"zone {self.id}: no houses")
        if not self.trans_capacity > 0:
            raise ValueError(f"zone {self.id}: transformer capacity must be positive")
        if not self.psi >= 0:
            raise ValueError(f"zone {self.id}: peak cost factor must be nonnegative")


@dataclass(frozen=True)
class ForecastSet:
    """Day-ahead forecasts. ``P_sum_hat`` maps zone id to net non-HP load (load - PV), kW."""

    T_out_hat: np.ndarray
    P_sum_hat: Mapping
    price: np.ndarray
    dt: float

    def __post_init__(self):
        T = np.asarray(self.T_out_hat, float)
        price = np.asarray(self.price, float)
        loads = {z: np.asarray(v, float) for z, v in dict(self.P_sum_hat).items()}
        H = T.size
        if price.size != H or any(v.size != H for v in loads.values()):
            raise ValueError("forecast vectors must all have length H")
        if np.any(price < 0):
            raise ValueError("prices must be nonnegative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        for arr in (T, price, *loads.values()):
            arr.setflags(write=False)
        object.__setattr__(self, "T_out_hat", T)
        object.__setattr__(self, "price", price)
        object.__setattr__(self, "P_sum_hat", loads)

    @property
    def H(self) -> int:
        return self.T_out_hat.size


@dataclass(frozen=True)
class MilpInstance:
    """min c.x subject to rows ``A x (<=|>=|=) rhs`` and ``lb <= x <= ub``.

    ``sense`` holds 'L', 'G' or 'E' per row. The heat-pump fields (houses,
    zones, H) are empty for generic instances.
    """

    c: np.ndarray
    A: np.ndarray
    sense: np.ndarray
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integer: np.ndarray
    var_names: tuple = ()
    row_names: tuple = ()
    row_tags: tuple = ()
    variant: str = "generic"
    houses: tuple = ()
    zones: tuple = ()
    H: int = 0
    dt: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        c = np.asarray(self.c, float)
        n = c.size
        A = np.asarray(self.A, float).reshape(-1, n)
        m = A.shape[0]
        sense = np.asarray(self.sense, dtype="<U1").reshape(m)
        if not set(sense.tolist()) <= {"L", "G", "E"}:
            raise ValueError("row senses must be 'L', 'G' or 'E'")
        arrays = dict(c=c, A=A, sense=sense,
                      rhs=np.asarray(self.rhs, float).reshape(m),
                      lb=np.asarray(self.lb, float).reshape(n),
                      ub=np.asarray(self.ub, float).reshape(n),
                      integer=np.asarray(self.integer, bool).reshape(n))
        if np.any(arrays["lb"] > arrays["ub"]):
            raise ValueError("variable lower bound above upper bound")
        for k, v in arrays.items():
            v.setflags(write=False)
            object.__setattr__(self, k, v)
        if not self.var_names:
            object.__setattr__(self, "var_names", tuple(f"v{j}" for j in range(n)))
        if not self.row_names:
            object.__setattr__(self, "row_names", tuple(f"r{i}" for i in range(m)))
        if not self.row_tags:
            object.__setattr__(self, "row_tags", tuple("row" for _ in range(m)))
        if len(self.var_names) != n or len(self.row_names) != m or len(self.row_tags) != m:
            raise ValueError("name/tag lengths do not match the matrix")

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.rhs.size

    @property
    def binaries(self) -> np.ndarray:
        return np.flatnonzero(self.integer)

    def x_index(self, house_pos: int, t: int) -> int:
        return house_pos * self.H + t

    def pmax_index(self, zone_pos: int) -> int:
        return len(self.houses) * self.H + zone_pos

    def schedule_matrix(self, values) -> np.ndarray:
        v = np.asarray(values, float)[: len(self.houses) * self.H]
        return np.rint(v).astype(int).reshape(len(self.houses), self.H)

    def slacks(self, values) -> np.ndarray:
        """Signed slack per row; negative means violated."""
        act = self.A @ np.asarray(values, float)
        s = np.where(self.sense == "L", self.rhs - act, act - self.rhs)
        return np.where(self.sense == "E", -np.abs(act - self.rhs), s)

    def objective(self, values) -> float:
        return float(self.c @ np.asarray(values, float))

    def complete(self, xbin) -> np.ndarray:
        """Full variable vector from values of the integer variables.

        Each continuous variable is set to the smallest value its rows allow
        (epigraph variables such as the zonal peak). Requires nonnegative
        objective weight on continuous variables and at most one continuous
        variable per row.
        """
        xb = np.asarray(xbin, float)
        single = xb.ndim == 1
        xb = np.atleast_2d(xb)
        ints = self.binaries
        cont = np.flatnonzero(~self.integer)
        out = np.zeros((xb.shape[0], self.n_vars))
        out[:, ints] = xb.reshape(xb.shape[0], -1)
        if cont.size:
            Ac = self.A[:, cont]
            if np.any((Ac != 0).sum(axis=1) > 1) or np.any(self.c[cont] < 0):
                raise ValueError("continuous variables are not of epigraph form")
            base = out[:, ints] @ self.A[:, ints].T  # (B, m)
            for k, j in enumerate(cont):
                a = Ac[:, k]
                val = np.full(xb.shape[0], self.lb[j])
                lower_rows = np.flatnonzero(((self.sense == "L") & (a < 0)) | ((self.sense == "G") & (a > 0))
                                            | ((self.sense == "E") & (a != 0)))
                for i in lower_rows:
                    val = np.maximum(val, (self.rhs[i] - base[:, i]) / a[i])
                out[:, j] = val
        return out[0] if single else out


@dataclass
class ScheduleSolution:
    """Result of a MILP solve. ``x`` is houses x H (None when no incumbent)."""

    status: str
    x: np.ndarray | None = None
    P_max: dict = field(default_factory=dict)
    objective_value: float = float("nan")
    gap: float = float("inf")
    bound: float = float("-inf")
    nodes: int = 0
    values: np.ndarray | None = None
    elapsed: float = 0.0


@dataclass(frozen=True)
class Violation:
    row: int
    name: str
    tag: str
    activity: float
    rhs: float
    slack: float


def validate_schedule(x, instance: MilpInstance, tol: float = 1e-6) -> list[Violation]:
    """Rows violated by ``x``: a full variable vector, or a houses x H schedule
    (zonal peaks then set to the smallest feasible value)."""
    x = np.asarray(x, float)
    if x.ndim == 2:
        if x.shape != (len(instance.houses), instance.H):
            raise ValueError(f"schedule shape {x.shape} does not match instance")
        values = instance.complete(x.ravel())
    elif x.size == instance.n_vars:
        values = x
    else:
        raise ValueError(f"vector of length {x.size}, instance has {instance.n_vars} variables")
    act = instance.A @ values
    slack = instance.slacks(values)
    bad = np.flatnonzero(slack < -tol)
    return [Violation(int(i), instance.row_names[i], instance.row_tags[i],
                      float(act[i]), float(instance.rhs[i]), float(slack[i])) for i in bad]


def switching_rows(H: int) -> list[tuple[int, dict, str, float]]:
    """Minimum-run rows ``-1 <= 2 x_t - x_{t-1} - x_{t+1} <= 1`` on interior slots.

    Returns (t, {slot: coef}, sense, rhs) tuples; empty for H < 3.
    """
    rows = []
    for t in range(1, H - 1):
        coefs = {t - 1: -1.0, t: 2.0, t + 1: -1.0}
        rows.append((t, coefs, "L", 1.0))
        rows.append((t, coefs, "G", -1.0))
    return rows


def _check_layout(houses: Sequence[HouseSpec], zones: Sequence[ZoneSpec], forecast: ForecastSet):
    ids = [h.id for h in houses]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate house ids")
    seen = {}
    for z in zones:
        for hid in z.houses:
            if hid not in ids:
                raise ValueError(f"zone {z.id} references unknown house {hid}")
            if hid in seen:
                raise ValueError(f"house {hid} assigned to zones {seen[hid]} and {z.id}")
            seen[hid] = z.id
        if z.id not in forecast.P_sum_hat:
            raise ValueError(f"no load forecast for zone {z.id}")
    missing = set(ids) - set(seen)
    if missing:
        raise ValueError(f"houses without a zone: {sorted(missing)}")


def build_objective(houses: Sequence[HouseSpec], zones: Sequence[ZoneSpec], forecast: ForecastSet) -> np.ndarray:
    """psi per zonal peak plus price * dt * P_hp per ON slot ($)."""
    H = forecast.H
    c = np.zeros(len(houses) * H + len(zones))
    for k, h in enumerate(houses):
        c[k * H:(k + 1) * H] = forecast.price * forecast.dt * h.P_hp
    for z, zone in enumerate(zones):
        c[len(houses) * H + z] = zone.psi
    return c


def _as_slot_array(v, H, name):
    arr = np.broadcast_to(np.asarray(v, float), (H,)).copy()
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite margin")
    return arr


def _assemble(houses, zones, forecast, power_shift, temp_hi_shift, temp_lo_shift,
              variant, scheme: Scheme = "exact", check: bool = True) -> MilpInstance:
    houses = list(houses)
    zones = list(zones)
    _check_layout(houses, zones, forecast)
    H, dt = forecast.H, forecast.dt
    nx = len(houses) * H
    n = nx + len(zones)
    pos = {h.id: k for k, h in enumerate(houses)}
    T_hi_in = forecast.T_out_hat + temp_hi_shift
    T_lo_in = forecast.T_out_hat - temp_lo_shift

    rows, sense, rhs, names, tags = [], [], [], [], []

    def add(coefs: dict, s, b, name, tag):
        r = np.zeros(n)
        for j, a in coefs.items():
            r[j] += a
        rows.append(r)
        sense.append(s)
        rhs.append(float(b))
        names.append(name)
        tags.append(tag)

    for z, zone in enumerate(zones):
        pz = nx + z
        shift = power_shift[zone.id]
        load = forecast.P_sum_hat[zone.id] + shift
        if check and np.any(load > zone.trans_capacity + 1e-9):
            t = int(np.argmax(load > zone.trans_capacity + 1e-9))
            raise InfeasibleModelError(
                f"zone {zone.id}: load forecast plus margin exceeds transformer capacity at slot {t} "
                f"even with every heat pump off", tag="peak", slot=t)
        for t in range(H):
            coefs = {pos[hid] * H + t: houses[pos[hid]].P_hp for hid in zone.houses}
            coefs[pz] = -1.0
            add(coefs, "L", -load[t], f"peak[{zone.id},{t}]", "peak")
        add({pz: 1.0}, "L", zone.trans_capacity, f"cap[{zone.id}]", "capacity")

    for k, h in enumerate(houses):
        maps = build_affine_maps(h, H, dt, scheme)
        cols = np.arange(k * H, (k + 1) * H)
        hi_rhs = h.T_hi - maps.K @ T_hi_in - maps.l
        lo_rhs = h.T_lo - maps.K @ T_lo_in - maps.l
        if check:
            _check_house(h, maps, hi_rhs, lo_rhs, T_lo_in)
        for t in range(H):
            coefs = dict(zip(cols[: t + 1].tolist(), maps.J[t, : t + 1].tolist()))
            if np.isfinite(hi_rhs[t]):
                add(coefs, "L", hi_rhs[t], f"comfort_hi[{h.id},{t + 1}]", "comfort_hi")
            if np.isfinite(lo_rhs[t]):
                add(coefs, "G", lo_rhs[t], f"comfort_lo[{h.id},{t + 1}]", "comfort_lo")
        water_rhs = h.Tw0 - maps.N[-1] @ T_lo_in - maps.p[-1]
        add(dict(zip(cols.tolist(), maps.M[-1].tolist())), "G", water_rhs, f"water[{h.id}]", "water_hold")
        for t, coefs, s, b in switching_rows(H):
            tag = "switch_hi" if s == "L" else "switch_lo"
            add({cols[j]: a for j, a in coefs.items()}, s, b, f"{tag}[{h.id},{t}]", tag)

    lb = np.zeros(n)
    ub = np.ones(n)
    ub[nx:] = [z.trans_capacity for z in zones]
    integer = np.zeros(n, bool)
    integer[:nx] = True
    var_names = tuple(f"x[{h.id},{t}]" for h in houses for t in range(H)) + tuple(f"Pmax[{z.id}]" for z in zones)
    A = np.array(rows) if rows else np.zeros((0, n))
    return MilpInstance(
        c=build_objective(houses, zones, forecast), A=A, sense=np.array(sense, dtype="<U1"),
        rhs=np.array(rhs), lb=lb, ub=ub, integer=integer, var_names=var_names,
        row_names=tuple(names), row_tags=tuple(tags), variant=variant,
        houses=tuple(h.id for h in houses), zones=tuple(z.id for z in zones), H=H, dt=dt,
        meta={"power_shift": {z: np.asarray(v) for z, v in power_shift.items()},
              "temp_hi_shift": np.asarray(temp_hi_shift), "temp_lo_shift": np.asarray(temp_lo_shift)})


def _check_house(h: HouseSpec, maps, hi_rhs, lo_rhs, T_lo_in):
    tol = 1e-9
    band = hi_rhs - lo_rhs
    if np.any(band < -tol):
        t = int(np.argmax(band < -tol))
        raise InfeasibleModelError(
            f"house {h.id}: temperature margins empty the comfort band at slot {t + 1}",
            tag="comfort_hi", house=h.id, slot=t + 1)
    all_on = maps.J.sum(axis=1)
    short = all_on < lo_rhs - tol
    if np.any(short):
        t = int(np.argmax(short))
        raise InfeasibleModelError(
            f"house {h.id}: continuous heating cannot reach the lower comfort bound at slot {t + 1}",
            tag="comfort_lo", house=h.id, slot=t + 1)
    over = hi_rhs < -tol
    if np.any(over):
        t = int(np.argmax(over))
        raise InfeasibleModelError(
            f"house {h.id}: indoor temperature exceeds the upper comfort bound at slot {t + 1} with the heat pump off",
            tag="comfort_hi", house=h.id, slot=t + 1)
    water_need = h.Tw0 - maps.N[-1] @ T_lo_in - maps.p[-1]
    if maps.M[-1].sum() < water_need - tol:
        raise InfeasibleModelError(
            f"house {h.id}: continuous heating cannot restore the tank temperature by the end of the day",
            tag="water_hold", house=h.id, slot=maps.H)


def _zone_shifts(zones, H, per_zone):
    return {z.id: _as_slot_array(per_zone(z), H, f"power margin[{z.id}]") for z in zones}


def _per_zone(models, zone_id):
    if isinstance(models, Mapping):
        return models[zone_id]
    return models


def build_deterministic(houses, zones, forecast: ForecastSet, scheme: Scheme = "exact",
                        check: bool = True) -> MilpInstance:
    H = forecast.H
    zero = np.zeros(H)
    return _assemble(houses, zones, forecast, {z.id: zero for z in zones}, zero, zero,
                     "deterministic", scheme, check)


def dro_margins(power_models, temp_models, eta, chi, H: int, zones,
                lower: str = "sign-correct"):
    """Per-slot margins (power by zone, temperature upper, temperature lower).

    Models are Gaussian or KDE per slot; ``power_models`` may be a mapping
    from zone id to a per-slot list. ``lower="mirrored"`` reuses the upper
    temperature margin with flipped sign for lower-bound and water rows.
    """
    eta = _as_slot_array(eta, H, "eta")
    chi = _as_slot_array(chi, H, "chi")

    def slotwise(models, radii):
        models = list(models)
        if len(models) != H:
            raise ValueError(f"expected {H} per-slot models, got {len(models)}")
        return np.array([dro_margin(m, r) for m, r in zip(models, radii)])

    power = {z.id: slotwise(_per_zone(power_models, z.id), eta) for z in zones}
    temp_models = list(temp_models)
    hi = slotwise(temp_models, chi)
    if lower == "sign-correct":
        lo = slotwise([m.negated() for m in temp_models], chi)
    elif lower == "mirrored":
        lo = -hi
    else:
        raise ValueError(f"unknown lower-margin form {lower!r}")
    return power, hi, lo


def build_kdea_dro(houses, zones, forecast: ForecastSet, power_models, temp_models, eta, chi,
                   lower: str = "sign-correct", scheme: Scheme = "exact", check: bool = True) -> MilpInstance:
    power, hi, lo = dro_margins(power_models, temp_models, eta, chi, forecast.H, zones, lower)
    return _assemble(houses, zones, forecast, power, hi, lo, "kdea-dro", scheme, check)


def build_ga_dro(houses, zones, forecast: ForecastSet, power_models, temp_models, eta, chi,
                 lower: str = "sign-correct", scheme: Scheme = "exact", check: bool = True) -> MilpInstance:
    power, hi, lo = dro_margins(power_models, temp_models, eta, chi, forecast.H, zones, lower)
    return _assemble(houses, zones, forecast, power, hi, lo, "ga-dro", scheme, check)


def build_ro(houses, zones, forecast: ForecastSet, power_interval, temp_interval,
             scheme: Scheme = "exact", check: bool = True) -> MilpInstance:
    """Worst-case interval counterpart: upper ends for peak and upper comfort rows,
    lower temperature end for lower comfort and water-hold rows.

    Intervals are (lo, hi) pairs of scalars or per-slot arrays; the power
    interval may be a mapping by zone id.
    """
    H = forecast.H

    def parse(iv, name):
        lo, hi = iv
        lo, hi = _as_slot_array(lo, H, name), _as_slot_array(hi, H, name)
        if np.any(lo > hi):
            raise ValueError(f"{name}: empty interval (lower end above upper end)")
        return lo, hi

    power = {z.id: parse(_per_zone(power_interval, z.id), f"power interval[{z.id}]")[1] for z in zones}
    t_lo, t_hi = parse(temp_interval, "temperature interval")
    return _assemble(houses, zones, forecast, power, t_hi, -t_lo, "ro", scheme, check)


def build_from_margins(houses, zones, forecast: ForecastSet, power_margin, temp_hi, temp_lo,
                       variant: str, scheme: Scheme = "exact", check: bool = True) -> MilpInstance:
    """Assemble any variant from precomputed margins.

    ``power_margin`` maps zone id to a per-slot (or scalar) load shift;
    ``temp_hi`` shifts the outdoor forecast up for upper comfort rows and
    ``temp_lo`` down for lower comfort and water-hold rows.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    H = forecast.H
    power = {z.id: _as_slot_array(_per_zone(power_margin, z.id), H, f"power margin[{z.id}]") for z in zones}
    return _assemble(houses, zones, forecast, power, _as_slot_array(temp_hi, H, "temp_hi"),
                     _as_slot_array(temp_lo, H, "temp_lo"), variant, scheme, check)


def energy_cost(x, houses, forecast: ForecastSet) -> float:
    """Electricity cost of a houses x H schedule ($)."""
    x = np.asarray(x, float)
    p = np.array([h.P_hp for h in houses])
    return float(np.sum((p[:, None] * x) @ forecast.price) * forecast.dt)
