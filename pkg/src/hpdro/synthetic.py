"""Synthetic stand-ins for the winter-day inputs: houses, forecasts, prices, error histories.

Every generator is a pure function of its arguments; the random ones draw
from a caller-supplied ``numpy.random.Generator``, so a fixed seed
regenerates the shipped data files bit-for-bit.
"""

from __future__ import annotations

import numpy as np

from .thermal import HouseSpec

# R, C, T0, R_w, C_w, Tw0, P_hp for houses 1..10; C and C_w in kWh/degC
REFERENCE_HOUSES = (
    (2.8, 5.4, 19, 2.2, 4.9, 42, 5.0),
    (2.9, 5.2, 20, 2.4, 4.9, 45, 4.7),
    (3.0, 4.6, 21, 2.5, 4.8, 47, 4.3),
    (2.9, 4.1, 20, 2.6, 5.0, 45, 4.7),
    (3.1, 5.9, 19, 2.4, 5.0, 42, 4.8),
    (3.1, 4.7, 19, 2.8, 5.4, 42, 5.0),
    (2.8, 5.1, 20, 2.4, 5.8, 45, 4.7),
    (3.0, 5.3, 21, 2.6, 5.2, 47, 4.3),
    (2.6, 5.1, 20, 2.6, 4.9, 45, 4.7),
    (3.2, 4.5, 19, 2.5, 5.3, 42, 4.8),
)

# hourly anchors of a clear mid-winter day, degC
_TOUT_HOURS = (0, 3, 6, 9, 12, 15, 18, 21, 24)
_TOUT_VALUES = (-6.0, -7.5, -8.0, -5.0, -0.5, 1.5, -1.5, -4.0, -6.0)

# (start hour, end hour, level) before normalisation to mean 1
_PRICE_BANDS = ((0, 7, 0.3), (7, 10, 1.0), (10, 15, 1.4), (15, 17, 1.0),
                (17, 21, 2.0), (21, 23, 1.0), (23, 24, 0.3))


def reference_houses(n: int = 10, **overrides) -> list[HouseSpec]:
    """Houses 1..n with a COP of 3, unit water-to-house efficiency and an [18, 24] degC band."""
    out = []
    for i, (R, C, T0, Rw, Cw, Tw0, P) in enumerate(REFERENCE_HOUSES[:n], start=1):
        kw = dict(id=i, R=R, C=C, R_w=Rw, C_w=Cw, P_hp=P, cop=3.0, eff_w2h=1.0,
                  T0=float(T0), Tw0=float(Tw0), T_lo=18.0, T_hi=24.0, Tw_lo=40.0, Tw_hi=45.0)
        kw.update(overrides)
        out.append(HouseSpec(**kw))
    return out


def slot_hours(H: int, dt: float) -> np.ndarray:
    """Slot midpoints in hours from midnight."""
    return (np.arange(H) + 0.5) * dt


def outdoor_forecast(H: int, dt: float) -> np.ndarray:
    return np.interp(slot_hours(H, dt), _TOUT_HOURS, _TOUT_VALUES)


def load_forecast(H: int, dt: float, night_kw: float = 1.0, morning_kw: float = 4.0,
                  evening_kw: float = 26.0, evening_width: float = 1.0) -> np.ndarray:
    """Aggregate non-HP load on the zone transformer (kW): a night base plus
    a morning bump and a sharp evening peak centred on 19:00."""
    h = slot_hours(H, dt)
    return (night_kw
            + morning_kw * np.exp(-0.5 * ((h - 7.5) / 1.0) ** 2)
            + evening_kw * np.exp(-0.5 * ((h - 19.0) / evening_width) ** 2))


def pv_forecast(H: int, dt: float, peak_kw: float = 6.0) -> np.ndarray:
    """Aggregate rooftop PV output (kW), sunrise 7:30 to sunset 17:30."""
    h = slot_hours(H, dt)
    shape = np.clip(np.sin(np.pi * (h - 7.5) / 10.0), 0.0, None)
    shape[(h < 7.5) | (h > 17.5)] = 0.0
    return peak_kw * shape ** 1.5


def tou_price(H: int, dt: float) -> np.ndarray:
    """Three-level time-of-use tariff scaled to a mean of exactly 1 $/kWh."""
    h = slot_hours(H, dt)
    p = np.empty(H)
    for a, b, level in _PRICE_BANDS:
        p[(h >= a) & (h < b)] = level
    return p / p.mean()


def temperature_sigma(H: int, dt: float, lo: float = 0.2, hi: float = 0.6) -> np.ndarray:
    """Error spread growing with lead time from a 23:30 issue time."""
    lead = slot_hours(H, dt) + 0.5
    return lo + (hi - lo) * np.sqrt(lead / lead.max())


def temperature_errors(n: int, H: int, dt: float, rng, shape: float = 4.0,
                       bias: float = 0.6) -> np.ndarray:
    """Outdoor temperature forecast errors (actual minus forecast).

    Standardised gamma draws (skewness ``2/sqrt(shape)``) shifted by ``bias``
    standard deviations, i.e. a forecast that runs slightly cold, then
    scaled per slot by :func:`temperature_sigma`.
    """
    z = (rng.gamma(shape, 1.0, size=(n, H)) - shape) / np.sqrt(shape) + bias
    return z * temperature_sigma(H, dt)


def write_dataset(directory, n_houses: int = 5, H: int = 48, dt: float = 0.5, capacity_kw: float = 34.0,
                  psi: float = 10.0, n_temp: int = 92, n_power: int = 500, seed: int = 7,
                  manifest: dict | None = None, prefix: str = "") -> dict:
    """Write houses, forecast, price and error-history files plus a manifest.

    Returns the manifest dictionary. Power errors follow the transformed
    chi-square law used in the Monte Carlo harness; temperature errors
    come from :func:`temperature_errors`.
    """
    from pathlib import Path

    import yaml

    from .evaluation import sample_power_errors
    from .io import POWER_PREFIX, TEMP_STREAM, atomic_write, write_forecast, write_histories, write_houses
    from .model import ForecastSet, ZoneSpec
    from .uncertainty import ErrorHistory

    d = Path(directory)
    houses = reference_houses(n_houses)
    zone = ZoneSpec("Z1", tuple(h.id for h in houses), capacity_kw, psi)
    fc = ForecastSet(outdoor_forecast(H, dt), {zone.id: load_forecast(H, dt) - pv_forecast(H, dt)},
                     tou_price(H, dt), dt)
    rng = np.random.default_rng(seed)
    te = temperature_errors(n_temp, H, dt, rng)
    pe = sample_power_errors(n_power, H, rng)
    note = [f"synthetic data, seed {seed}"]
    names = {k: f"{prefix}{k}" for k in ("houses.yaml", "forecast.csv", "price.csv",
                                         "errors_temperature.csv", "errors_power.csv", "manifest.yaml")}
    write_houses(d / names["houses.yaml"], houses, [zone], note)
    write_forecast(d / names["forecast.csv"], d / names["price.csv"], fc, note)
    write_histories(d / names["errors_temperature.csv"],
                    [ErrorHistory(TEMP_STREAM, t, te[:, t]) for t in range(H)], note)
    write_histories(d / names["errors_power.csv"],
                    [ErrorHistory(POWER_PREFIX + zone.id, t, pe[:, t]) for t in range(H)], note)
    doc = {"houses": names["houses.yaml"], "forecast": names["forecast.csv"], "price": names["price.csv"],
           "errors": [names["errors_temperature.csv"], names["errors_power.csv"]], "H": H, "dt_h": dt}
    doc.update(manifest or {})
    atomic_write(d / names["manifest.yaml"], yaml.safe_dump(doc, sort_keys=False))
    return doc
