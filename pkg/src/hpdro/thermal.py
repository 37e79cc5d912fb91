"""First-order RC dynamics of a house heated through a hot-water tank.

Continuous model (one house)::

    C_w dTw/dt = x * cop * P_hp + (T - Tw) / R_w
    C   dT/dt  = (T_out - T) / R + eff_w2h * (Tw - T) / R_w

Units: temperatures in degC, R in degC/kW, C in kWh/degC, time in hours,
so every R*C product is a time constant in hours.

Two one-step discretisations are provided:

``"exact"``
    zero-order hold on (x, T_out) over the step, coupled 2x2 matrix
    exponential. Default everywhere.
``"split"``
    each equation integrated exactly with the other state frozen over the
    step. Indoor temperature at t+1 then does not depend on x_t.

Both are linear, so a step is ``[T', Tw'] = G @ [T, Tw, x, T_out]`` and a
whole horizon unrolls into affine maps of the schedule and outdoor profile.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Literal

import numpy as np
from scipy.linalg import expm

Scheme = Literal["exact", "split"]


@dataclass(frozen=True)
class HouseSpec:
    """Thermal parameters of one house, its tank and heat pump."""

    id: int
    R: float
    C: float
    R_w: float
    C_w: float
    P_hp: float
    cop: float = 3.0
    eff_w2h: float = 1.0
    T0: float = 20.0
    Tw0: float = 45.0
    T_lo: float = 18.0
    T_hi: float = 24.0
    Tw_lo: float = 40.0
    Tw_hi: float = 45.0

    def __post_init__(self):
        for name in ("R", "C", "R_w", "C_w", "P_hp", "cop"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"house {self.id}: {name} must be positive and finite, got {v}")
        if not (0 < self.eff_w2h <= 1):
            raise ValueError(f"house {self.id}: eff_w2h must lie in (0, 1], got {self.eff_w2h}")
        if not self.T_lo < self.T_hi:
            raise ValueError(f"house {self.id}: T_lo={self.T_lo} must be below T_hi={self.T_hi}")
        if not self.Tw_lo < self.Tw_hi:
            raise ValueError(f"house {self.id}: Tw_lo={self.Tw_lo} must be below Tw_hi={self.Tw_hi}")
        if not self.T_lo <= self.T0 <= self.T_hi:
            raise ValueError(f"house {self.id}: T0={self.T0} outside comfort band")
        if not (math.isfinite(self.T0) and math.isfinite(self.Tw0)):
            raise ValueError(f"house {self.id}: initial temperatures must be finite")

    @property
    def heat_output(self) -> float:
        """Thermal power delivered to the tank when ON (kW)."""
        return self.cop * self.P_hp


@dataclass(frozen=True)
class ThermalState:
    T: float
    Tw: float


def _system_matrices(spec: HouseSpec) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time ``ds/dt = A s + B u`` with s=(T, Tw), u=(x, T_out)."""
    a_house = (1.0 / spec.R + spec.eff_w2h / spec.R_w) / spec.C
    A = np.array([
        [-a_house, spec.eff_w2h / (spec.R_w * spec.C)],
        [1.0 / (spec.R_w * spec.C_w), -1.0 / (spec.R_w * spec.C_w)],
    ])
    B = np.array([
        [0.0, 1.0 / (spec.R * spec.C)],
        [spec.heat_output / spec.C_w, 0.0],
    ])
    return A, B


@lru_cache(maxsize=4096)
def step_matrix(spec: HouseSpec, dt: float, scheme: Scheme = "exact") -> np.ndarray:
    """2x4 matrix G with ``[T', Tw'] = G @ [T, Tw, x, T_out]`` for one step of ``dt`` hours."""
    if not (math.isfinite(dt) and dt > 0):
        raise ValueError(f"dt must be positive, got {dt}")
    if scheme == "exact":
        A, B = _system_matrices(spec)
        aug = np.zeros((4, 4))
        aug[:2, :2] = A
        aug[:2, 2:] = B
        E = expm(aug * dt)
        G = np.hstack([E[:2, :2], E[:2, 2:]])
    elif scheme == "split":
        # tank with T frozen: Tw' = (R_w Q x + T) + (Tw - R_w Q x - T) e^{-dt/(R_w C_w)}
        dw = math.exp(-dt / (spec.R_w * spec.C_w))
        rq = spec.R_w * spec.heat_output
        tank = [1.0 - dw, dw, rq * (1.0 - dw), 0.0]
        # house with Tw frozen: relaxes towards the weighted mean of T_out and Tw
        a = 1.0 / spec.R + spec.eff_w2h / spec.R_w
        dh = math.exp(-a * dt / spec.C)
        wo = (1.0 / spec.R) / a
        ww = (spec.eff_w2h / spec.R_w) / a
        house = [dh, ww * (1.0 - dh), 0.0, wo * (1.0 - dh)]
        G = np.array([house, tank])
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    G.setflags(write=False)
    return G


def step_thermal(state: ThermalState, x: int, T_out: float, spec: HouseSpec,
                 dt: float, scheme: Scheme = "exact") -> ThermalState:
    """Advance (T, Tw) by one step of ``dt`` hours with the HP state ``x`` held."""
    if x not in (0, 1):
        raise ValueError(f"x must be 0 or 1, got {x!r}")
    vals = (state.T, state.Tw, T_out)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError(f"non-finite thermal input: T={state.T}, Tw={state.Tw}, T_out={T_out}")
    G = step_matrix(spec, dt, scheme)
    T, Tw = G @ np.array([state.T, state.Tw, float(x), T_out])
    return ThermalState(float(T), float(Tw))


@dataclass(frozen=True)
class AffineThermalMap:
    """Trajectories as affine functions of the schedule and outdoor profile.

    Row ``i`` is the state after ``i + 1`` steps (T_1 .. T_H); column ``j``
    is the input applied during step ``j`` (x_0 .. x_{H-1}). Causality makes
    every matrix lower triangular in this labelling: entry (i, j) is zero
    for j > i.
    """

    J: np.ndarray
    K: np.ndarray
    l: np.ndarray
    M: np.ndarray
    N: np.ndarray
    p: np.ndarray
    H: int
    dt: float

    def indoor(self, x, T_out) -> np.ndarray:
        return self.J @ np.asarray(x, float) + self.K @ np.asarray(T_out, float) + self.l

    def tank(self, x, T_out) -> np.ndarray:
        return self.M @ np.asarray(x, float) + self.N @ np.asarray(T_out, float) + self.p

    def to_csv(self, path) -> None:
        """Long-format dump: one line per (block, row, col, value)."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["block", "row", "col", "value"])
            for name in ("J", "K", "M", "N"):
                mat = getattr(self, name)
                for i, j in zip(*np.nonzero(mat)):
                    w.writerow([name, i + 1, j, repr(float(mat[i, j]))])
            for name in ("l", "p"):
                for i, v in enumerate(getattr(self, name)):
                    w.writerow([name, i + 1, "", repr(float(v))])


def build_affine_maps(spec: HouseSpec, H: int, dt: float,
                      scheme: Scheme = "exact") -> AffineThermalMap:
    """Unroll the one-step recursion into (J, K, l, M, N, p).

    Forward substitution, O(H^2); no matrix inversion. Initial conditions
    end up in the free responses ``l`` and ``p``.
    """
    if H < 1:
        raise ValueError(f"horizon must be at least one step, got H={H}")
    G = step_matrix(spec, dt, scheme)
    J = np.zeros((H, H))
    K = np.zeros((H, H))
    M = np.zeros((H, H))
    N = np.zeros((H, H))
    l = np.zeros(H)
    p = np.zeros(H)
    # coefficients of the current state: T = jx.x + kt.T_out + lc
    jx, kt, lc = np.zeros(H), np.zeros(H), spec.T0
    mx, nt, pc = np.zeros(H), np.zeros(H), spec.Tw0
    for t in range(H):
        jx_new = G[0, 0] * jx + G[0, 1] * mx
        kt_new = G[0, 0] * kt + G[0, 1] * nt
        mx_new = G[1, 0] * jx + G[1, 1] * mx
        nt_new = G[1, 0] * kt + G[1, 1] * nt
        jx_new[t] += G[0, 2]
        kt_new[t] += G[0, 3]
        mx_new[t] += G[1, 2]
        nt_new[t] += G[1, 3]
        lc, pc = G[0, 0] * lc + G[0, 1] * pc, G[1, 0] * lc + G[1, 1] * pc
        jx, kt, mx, nt = jx_new, kt_new, mx_new, nt_new
        J[t], K[t], M[t], N[t] = jx, kt, mx, nt
        l[t], p[t] = lc, pc
    for arr in (J, K, M, N, l, p):
        arr.setflags(write=False)
    return AffineThermalMap(J=J, K=K, l=l, M=M, N=N, p=p, H=H, dt=dt)


def simulate_trajectory(spec: HouseSpec, x, T_out, dt: float,
                        scheme: Scheme = "exact") -> tuple[np.ndarray, np.ndarray]:
    """Step-by-step recursion; returns (T, Tw) of length H+1 including t=0."""
    x = np.asarray(x, dtype=int)
    T_out = np.asarray(T_out, dtype=float)
    if x.shape != T_out.shape:
        raise ValueError("schedule and outdoor profile lengths differ")
    T = np.empty(len(x) + 1)
    Tw = np.empty(len(x) + 1)
    state = ThermalState(spec.T0, spec.Tw0)
    T[0], Tw[0] = state.T, state.Tw
    for t in range(len(x)):
        state = step_thermal(state, int(x[t]), float(T_out[t]), spec, dt, scheme)
        T[t + 1], Tw[t + 1] = state.T, state.Tw
    return T, Tw


def _fine_matrices(spec: HouseSpec, h: float, method: str) -> np.ndarray:
    if method == "exact":
        return step_matrix(spec, h, "exact")
    if method == "euler":
        A, B = _system_matrices(spec)
        return np.hstack([np.eye(2) + A * h, B * h])
    raise ValueError(f"unknown fine integration method {method!r}")


def simulate_fine_batch(specs, x, T_out, coarse_dt: float, fine_dt: float = 5.0,
                        method: str = "exact") -> tuple[np.ndarray, np.ndarray]:
    """Fine-step plant simulation for many houses and outdoor realisations.

    Parameters
    ----------
    specs : sequence of HouseSpec
    x : (houses, H) binary schedule, held within each coarse slot, or
        (trials, houses, H) for one schedule per realisation
    T_out : (H,) or (trials, H) outdoor temperature, held within each slot
    coarse_dt : slot length in hours
    fine_dt : integration step in seconds; must divide the slot length

    Returns
    -------
    T, Tw : arrays of shape (trials, houses, H+1) sampled at slot boundaries
    """
    specs = list(specs)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    T_out = np.atleast_2d(np.asarray(T_out, dtype=float))
    n_houses, H = x.shape[-2:]
    if x.ndim == 3 and x.shape[0] != T_out.shape[0]:
        raise ValueError(f"{x.shape[0]} schedules for {T_out.shape[0]} outdoor realisations")
    if n_houses != len(specs):
        raise ValueError(f"schedule has {n_houses} rows for {len(specs)} houses")
    if T_out.shape[1] != H:
        raise ValueError(f"outdoor profile length {T_out.shape[1]} != horizon {H}")
    coarse_s = coarse_dt * 3600.0
    if fine_dt >= coarse_s:
        raise ValueError(f"fine step {fine_dt}s must be shorter than the slot ({coarse_s}s)")
    ratio = coarse_s / fine_dt
    substeps = int(round(ratio))
    if abs(ratio - substeps) > 1e-9 * ratio:
        raise ValueError(f"fine step {fine_dt}s does not divide the slot ({coarse_s}s)")
    h = fine_dt / 3600.0
    G = np.stack([_fine_matrices(s, h, method) for s in specs])  # (houses, 2, 4)
    n_trials = T_out.shape[0]
    T = np.empty((n_trials, n_houses, H + 1))
    Tw = np.empty_like(T)
    cur_T = np.tile([s.T0 for s in specs], (n_trials, 1))
    cur_Tw = np.tile([s.Tw0 for s in specs], (n_trials, 1))
    T[:, :, 0], Tw[:, :, 0] = cur_T, cur_Tw
    g = [[G[:, r, c] for c in range(4)] for r in range(2)]
    for t in range(H):
        heat0 = g[0][2] * x[..., t] + g[0][3] * T_out[:, t:t + 1]
        heat1 = g[1][2] * x[..., t] + g[1][3] * T_out[:, t:t + 1]
        for _ in range(substeps):
            cur_T, cur_Tw = (g[0][0] * cur_T + g[0][1] * cur_Tw + heat0,
                             g[1][0] * cur_T + g[1][1] * cur_Tw + heat1)
        T[:, :, t + 1], Tw[:, :, t + 1] = cur_T, cur_Tw
    return T, Tw


def simulate_fine(spec: HouseSpec, x, T_out, coarse_dt: float, fine_dt: float = 5.0,
                  method: str = "exact") -> tuple[np.ndarray, np.ndarray]:
    """Single-house wrapper around :func:`simulate_fine_batch`; returns length-(H+1) arrays."""
    T, Tw = simulate_fine_batch([spec], np.asarray(x)[None, :], np.asarray(T_out, float),
                                coarse_dt, fine_dt, method)
    return T[0, 0], Tw[0, 0]
