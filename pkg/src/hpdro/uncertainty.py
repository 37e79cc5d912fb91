"""Nominal error distributions, KL-ball radii and the robust margins they induce.

A worst-case expectation over a KL ball of radius ``eta`` around a nominal
distribution P0 has the dual form::

    sup_{D(Q||P0) <= eta} E_Q[xi] = inf_{alpha > 0} alpha*eta + alpha*ln E_P0[exp(xi/alpha)]

For a Gaussian nominal this is ``mu + sigma*sqrt(2*eta)``. For a Gaussian
kernel density estimate the moment generating function factorises, giving
the convex one-dimensional objective evaluated by :func:`kde_dual_objective`,
minimised here by golden-section search on ``ln(alpha)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy.special import logsumexp, ndtr

DEFAULT_BANDWIDTH = {"power": 0.2, "temperature": 0.1}

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ErrorHistory:
    """Historical forecast errors (actual minus predicted) of one stream in one slot."""

    stream_id: str
    time_slot: int
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float).ravel()
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{self.stream_id}[{self.time_slot}]: non-finite error samples")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class GaussianModel:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")

    def pdf(self, xi):
        xi = np.asarray(xi, float)
        if self.sigma == 0:
            return np.where(xi == self.mu, np.inf, 0.0)
        z = (xi - self.mu) / self.sigma
        return np.exp(-0.5 * z * z) / (self.sigma * math.sqrt(2 * math.pi))

    def cdf(self, xi):
        xi = np.asarray(xi, float)
        if self.sigma == 0:
            return (xi >= self.mu).astype(float)
        return ndtr((xi - self.mu) / self.sigma)

    def negated(self) -> "GaussianModel":
        return GaussianModel(-self.mu, self.sigma)


@dataclass(frozen=True)
class KdeModel:
    """Equal-weight mixture of N(center_i, bandwidth^2)."""

    centers: np.ndarray = field(repr=False)
    bandwidth: float

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float).ravel()
        if c.size == 0:
            raise ValueError("KDE needs at least one center")
        if not (math.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)

    @property
    def n(self) -> int:
        return self.centers.size

    @property
    def mean(self) -> float:
        return float(self.centers.mean())

    def pdf(self, xi):
        xi = np.asarray(xi, float)
        z = (xi[..., None] - self.centers) / self.bandwidth
        return np.exp(-0.5 * z * z).mean(axis=-1) / (self.bandwidth * math.sqrt(2 * math.pi))

    def cdf(self, xi):
        xi = np.asarray(xi, float)
        return ndtr((xi[..., None] - self.centers) / self.bandwidth).mean(axis=-1)

    def negated(self) -> "KdeModel":
        return KdeModel(-self.centers, self.bandwidth)


def fit_gaussian(history: ErrorHistory) -> GaussianModel:
    """Sample mean and population (divide-by-N) standard deviation."""
    s = history.samples
    if s.size < 2:
        raise ValueError(f"{history.stream_id}[{history.time_slot}]: need >= 2 samples, got {s.size}")
    return GaussianModel(float(s.mean()), float(s.std()))


def fit_kde(history: ErrorHistory, bandwidth: float | None = None) -> KdeModel:
    if bandwidth is None:
        try:
            bandwidth = DEFAULT_BANDWIDTH[history.stream_id]
        except KeyError:
            raise ValueError(f"no default bandwidth for stream {history.stream_id!r}") from None
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    if history.samples.size < 1:
        raise ValueError(f"{history.stream_id}[{history.time_slot}]: no samples")
    return KdeModel(history.samples, float(bandwidth))


def radius_from_risk(beta: float) -> float:
    """KL radius for risk level beta, from beta = exp(-eta)."""
    if not (0 < beta <= 1):
        raise ValueError(f"risk level must lie in (0, 1], got {beta}")
    return -math.log(beta)


def radius_schedule(beta: float, H: int, mode: Literal["constant", "sqrt_t"] = "constant",
                    dt: float = 1.0) -> np.ndarray:
    """Per-slot radii. ``sqrt_t`` scales by sqrt of the elapsed hours at slot end ((t+1)*dt)."""
    eta = radius_from_risk(beta)
    if H < 1:
        raise ValueError(f"H must be >= 1, got {H}")
    mode = mode.replace("-", "_")
    if mode == "constant":
        return np.full(H, eta)
    if mode == "sqrt_t":
        return eta * np.sqrt(dt * np.arange(1, H + 1))
    raise ValueError(f"unknown radius mode {mode!r}")


def gaussian_margin(model: GaussianModel, eta: float) -> float:
    if eta < 0:
        raise ValueError(f"radius must be nonnegative, got {eta}")
    return model.mu + model.sigma * math.sqrt(2.0 * eta)


def dro_margin(model, eta: float) -> float:
    """KL-ball margin of a fitted nominal: closed form for a Gaussian, the
    minimised dual for a KDE."""
    if isinstance(model, GaussianModel):
        return gaussian_margin(model, eta)
    if isinstance(model, KdeModel):
        return g_min_kde(model, eta)
    raise TypeError(f"unsupported nominal model {type(model).__name__}")


def kde_dual_objective(alpha, centers, bandwidth: float, eta: float, weights=None):
    """g(alpha) = alpha*eta + h^2/(2 alpha) + alpha*ln sum_i w_i exp(c_i/alpha).

    Vectorised over ``alpha``. Uniform weights when ``weights`` is None;
    ``bandwidth = 0`` gives the plain dual for a discrete nominal.
    """
    alpha = np.asarray(alpha, float)
    c = np.asarray(centers, float)
    if weights is None:
        logw = np.full(c.size, -math.log(c.size))
    else:
        with np.errstate(divide="ignore"):
            logw = np.log(np.asarray(weights, float))
    lse = logsumexp(c[None, :] / alpha.reshape(-1, 1) + logw[None, :], axis=1)
    out = alpha.ravel() * eta + bandwidth ** 2 / (2.0 * alpha.ravel()) + alpha.ravel() * lse
    return out.reshape(alpha.shape)


def golden_section(f, lo: float, hi: float, tol: float = 1e-12, max_iter: int = 500):
    """Minimise a unimodal f on [lo, hi]; returns (argmin, min)."""
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def _minimise_dual(centers, bandwidth, eta, weights=None, rel_tol=1e-9):
    c = np.asarray(centers, float)
    spread = float(c.max() - c.min()) if c.size else 0.0
    scale = max(bandwidth, spread, 1.0)
    lo, hi = math.log(1e-6 * scale), math.log(1e6 * scale)
    floor, ceil = math.log(1e-15 * scale), math.log(1e15 * scale)
    # for small eta the minimiser sits near sqrt((h^2 + var) / (2 eta)), far above scale
    guess = math.log(math.sqrt(bandwidth ** 2 + spread ** 2 + 1e-300)) - 0.5 * math.log(2.0 * eta)
    if guess + math.log(1e3) > hi:
        hi = guess + math.log(1e3)
        ceil = max(ceil, guess + math.log(1e12))

    def g(u):
        return float(kde_dual_objective(math.exp(u), c, bandwidth, eta, weights))

    while True:
        grid = np.linspace(lo, hi, 61)
        vals = kde_dual_objective(np.exp(grid), c, bandwidth, eta, weights)
        k = int(np.argmin(vals))
        if k == 0 and lo > floor:
            lo, hi = max(floor, lo - (hi - lo) / 2), grid[2]
            continue
        if k == grid.size - 1 and hi < ceil:
            lo, hi = grid[-3], min(ceil, hi + (hi - lo) / 2)
            continue
        break
    if k == 0 and bandwidth > 0 or k == grid.size - 1:
        raise RuntimeError(
            f"dual minimiser not bracketed: scanned alpha in [{math.exp(lo):.3g}, {math.exp(hi):.3g}], "
            f"best at the {'lower' if k == 0 else 'upper'} edge (eta={eta}, h={bandwidth})")
    if k == 0:
        # discrete nominal with the infimum approached as alpha -> 0
        return float(vals[0])
    u, val = golden_section(g, grid[k - 1], grid[k + 1], tol=rel_tol)
    return min(val, float(vals[k]))


def g_min_kde(model: KdeModel, eta: float) -> float:
    """min over alpha > 0 of the KDE dual objective; the sample mean when eta == 0."""
    if eta < 0:
        raise ValueError(f"radius must be nonnegative, got {eta}")
    if eta == 0:
        return model.mean
    return _minimise_dual(model.centers, model.bandwidth, eta)


def dual_worst_case(values, probs, eta: float) -> float:
    """Worst-case expectation of a discrete nominal, computed from the dual side."""
    v = np.asarray(values, float)
    p = np.asarray(probs, float)
    if eta < 0:
        raise ValueError(f"radius must be nonnegative, got {eta}")
    if eta == 0:
        return float(p @ v)
    keep = p > 0
    return _minimise_dual(v[keep], 0.0, eta, p[keep])


def worst_case_expectation(values, probs, eta: float, tol: float = 1e-14) -> float:
    """max E_Q[value] over D_KL(Q || nominal) <= eta by exponential tilting.

    Q(s) is proportional to prob * exp(s * value); bisection on s >= 0 for
    D_KL(Q(s) || nominal) = eta. Returns max(value) when the ball already
    contains the nominal conditioned on the argmax.
    """
    v = np.asarray(values, float)
    p = np.asarray(probs, float)
    if v.shape != p.shape or v.ndim != 1 or v.size == 0:
        raise ValueError("values and probs must be equal-length 1-D arrays")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("probs must be nonnegative and sum to 1")
    if eta < 0:
        raise ValueError(f"radius must be nonnegative, got {eta}")
    keep = p > 0
    v, p = v[keep], p[keep] / p[keep].sum()
    vmax = v.max()
    if eta == 0 or np.all(v == vmax):
        return float(p @ v)
    top = p[v == vmax].sum()
    if eta >= -math.log(top):
        return float(vmax)
    logp = np.log(p)
    dv = v - vmax

    def tilt(s):
        logq = logp + s * dv
        logq -= logsumexp(logq)
        q = np.exp(logq)
        kl = float(q @ (logq - logp))
        return kl, float(q @ v)

    s_lo, s_hi = 0.0, 1.0 / max(v.max() - v.min(), 1e-300)
    while tilt(s_hi)[0] < eta:
        s_lo, s_hi = s_hi, 2.0 * s_hi
    for _ in range(400):
        mid = 0.5 * (s_lo + s_hi)
        if tilt(mid)[0] < eta:
            s_lo = mid
        else:
            s_hi = mid
        if s_hi - s_lo <= tol * max(1.0, s_hi):
            break
    return tilt(0.5 * (s_lo + s_hi))[1]


def kl_divergence_estimate(samples, model) -> float:
    """Histogram-vs-model KL divergence (nats) on Sturges-rule bins.

    ``model`` needs a vectorised ``cdf``. Diagnostic only; returns ``inf``
    with a warning when the model puts zero mass on an occupied bin.
    """
    s = np.asarray(samples, float).ravel()
    if s.size < 100:
        raise ValueError(f"need >= 100 samples for a histogram estimate, got {s.size}")
    bins = int(math.ceil(math.log2(s.size))) + 1
    counts, edges = np.histogram(s, bins=bins)
    f = counts / s.size
    pb = np.diff(np.asarray(model.cdf(edges), float))
    occupied = f > 0
    if np.any(pb[occupied] <= 0):
        warnings.warn("model assigns zero probability to an occupied bin; divergence is infinite",
                      RuntimeWarning, stacklevel=2)
        return math.inf
    return float(np.sum(f[occupied] * np.log(f[occupied] / pb[occupied])))


def error_interval(samples, coverage: float = 0.95, symmetric: bool = True) -> tuple[float, float]:
    """Uncertainty interval holding ``coverage`` of the samples.

    Symmetric: [-a, a] with a the ``coverage`` quantile of |xi|. Otherwise
    the central percentile interval.
    """
    s = np.asarray(samples, float).ravel()
    if not 0 < coverage < 1:
        raise ValueError(f"coverage must lie in (0, 1), got {coverage}")
    if symmetric:
        a = float(np.quantile(np.abs(s), coverage))
        return -a, a
    tail = (1 - coverage) / 2
    lo, hi = np.quantile(s, [tail, 1 - tail])
    return float(lo), float(hi)


def fit_streams(histories: Sequence[ErrorHistory], kind: str, bandwidth: float | None = None):
    """Fit one model per history, ordered by time slot."""
    ordered = sorted(histories, key=lambda h: h.time_slot)
    if kind == "gaussian":
        return [fit_gaussian(h) for h in ordered]
    if kind == "kde":
        return [fit_kde(h, bandwidth) for h in ordered]
    raise ValueError(f"unknown nominal kind {kind!r}")
