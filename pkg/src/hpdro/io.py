"""Configuration and data files: YAML house/zone configs, CSV forecasts,
prices and error histories, experiment manifests, provenance headers.

Quantities in YAML carry their unit in the key (``R_degC_per_kW``,
``P_hp_kW``). A known quantity under a different unit suffix is a unit
error, any other unrecognised key an unknown-key error; nothing is
silently ignored. CSV files may start with ``#`` comment lines (the
provenance header), which readers skip.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
import tempfile
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .model import ForecastSet, ZoneSpec
from .thermal import HouseSpec
from .uncertainty import ErrorHistory

TEMP_STREAM = "T_out"
POWER_PREFIX = "P_sum:"

# HouseSpec field -> key suffix
HOUSE_UNITS = {
    "R": "degC_per_kW", "C": "kWh_per_degC", "R_w": "degC_per_kW", "C_w": "kWh_per_degC",
    "P_hp": "kW", "T0": "degC", "Tw0": "degC", "T_lo": "degC", "T_hi": "degC",
    "Tw_lo": "degC", "Tw_hi": "degC",
}
HOUSE_PLAIN = ("id", "cop", "eff_w2h")
ZONE_UNITS = {"trans_capacity": "kW", "psi": "per_kW"}
ZONE_PLAIN = ("id", "houses")
UNIT_TOKENS = ("degC_per_kW", "kWh_per_degC", "per_kW", "per_kWh", "kWh", "kW", "W", "degC", "K",
               "K_per_W", "J_per_K", "degF", "MW", "h", "min", "s")


class ConfigError(ValueError):
    """Invalid configuration or data file.

    ``kind`` names the failure: ``unit``, ``unknown-key``, ``missing-key``,
    ``length``, ``capacity``, ``value`` or ``file``.
    """

    def __init__(self, message: str, kind: str, source: str | None = None):
        super().__init__(f"{source}: {message}" if source else message)
        self.kind = kind
        self.source = source


# ------------------------------------------------------------------ writing
def atomic_write(path, text: str) -> Path:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        mask = os.umask(0)
        os.umask(mask)
        os.chmod(tmp, 0o666 & ~mask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _csv_text(header: Sequence[str], rows, comments: Sequence[str] = ()) -> str:
    buf = _io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(v) -> str:
    """Shortest text that round-trips a float exactly."""
    return repr(float(v))


def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read: {e.strerror}", "file", str(path)) from e
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise ConfigError("no header row", "file", str(path))
    return [h.strip() for h in rows[0]], [[c.strip() for c in r] for r in rows[1:]]


def _floats(col, path, name) -> np.ndarray:
    try:
        return np.array([float(v) for v in col])
    except ValueError as e:
        raise ConfigError(f"column {name!r}: {e}", "value", str(path)) from e


# ------------------------------------------------------------- YAML models
def _split_key(key: str, units: Mapping[str, str], plain: Sequence[str]):
    """Map a YAML key to (field, unit); unit is None for plain fields."""
    if key in plain:
        return key, None
    for name, unit in units.items():
        if key == f"{name}_{unit}":
            return name, unit
    for name in sorted(units, key=len, reverse=True):
        if key == name:
            return name, ""
        for tok in UNIT_TOKENS:
            if key == f"{name}_{tok}":
                return name, tok
    return None, None


def _parse_record(rec, units, plain, what: str, source: str) -> dict:
    if not isinstance(rec, Mapping):
        raise ConfigError(f"{what}: expected a mapping, got {type(rec).__name__}", "value", source)
    out = {}
    for key, val in rec.items():
        name, unit = _split_key(str(key), units, plain)
        if name is None:
            raise ConfigError(f"{what}: unknown key {key!r}", "unknown-key", source)
        if unit is not None and unit != units[name]:
            got = unit or "no unit"
            raise ConfigError(f"{what}: {name} given in {got}, expected {name}_{units[name]}", "unit", source)
        out[name] = val
    return out


def houses_from_dict(doc, source: str = "<houses>") -> tuple[list[HouseSpec], list[ZoneSpec]]:
    if not isinstance(doc, Mapping):
        raise ConfigError("top level must be a mapping", "value", source)
    extra = set(doc) - {"houses", "zones"}
    if extra:
        raise ConfigError(f"unknown key(s) {sorted(extra)}", "unknown-key", source)
    for k in ("houses", "zones"):
        if k not in doc:
            raise ConfigError(f"missing key {k!r}", "missing-key", source)
    required = ("id", "R", "C", "R_w", "C_w", "P_hp")
    houses = []
    for i, rec in enumerate(doc["houses"] or []):
        kw = _parse_record(rec, HOUSE_UNITS, HOUSE_PLAIN, f"house #{i + 1}", source)
        missing = [f for f in required if f not in kw]
        if missing:
            raise ConfigError(f"house #{i + 1}: missing {missing}", "missing-key", source)
        try:
            houses.append(HouseSpec(**{k: (int(v) if k == "id" else float(v)) for k, v in kw.items()}))
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e), "value", source) from e
    zones = []
    for i, rec in enumerate(doc["zones"] or []):
        kw = _parse_record(rec, ZONE_UNITS, ZONE_PLAIN, f"zone #{i + 1}", source)
        missing = [f for f in ("id", "houses", "trans_capacity", "psi") if f not in kw]
        if missing:
            raise ConfigError(f"zone #{i + 1}: missing {missing}", "missing-key", source)
        if float(kw["trans_capacity"]) <= 0:
            raise ConfigError(f"zone {kw['id']}: transformer capacity must be positive, got "
                              f"{kw['trans_capacity']}", "capacity", source)
        if float(kw["psi"]) < 0:
            raise ConfigError(f"zone {kw['id']}: peak cost factor must be nonnegative", "capacity", source)
        zones.append(ZoneSpec(str(kw["id"]), tuple(int(h) for h in kw["houses"]),
                              float(kw["trans_capacity"]), float(kw["psi"])))
    if not houses or not zones:
        raise ConfigError("need at least one house and one zone", "value", source)
    ids = [h.id for h in houses]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate house ids", "value", source)
    for z in zones:
        unknown = set(z.houses) - set(ids)
        if unknown:
            raise ConfigError(f"zone {z.id} references unknown houses {sorted(unknown)}", "value", source)
    return houses, zones


def houses_to_dict(houses: Sequence[HouseSpec], zones: Sequence[ZoneSpec]) -> dict:
    hs = []
    for h in houses:
        rec = {"id": h.id}
        for f in fields(HouseSpec):
            if f.name == "id":
                continue
            key = f"{f.name}_{HOUSE_UNITS[f.name]}" if f.name in HOUSE_UNITS else f.name
            rec[key] = float(getattr(h, f.name))
        hs.append(rec)
    zs = [{"id": z.id, "houses": list(z.houses), "trans_capacity_kW": float(z.trans_capacity),
           "psi_per_kW": float(z.psi)} for z in zones]
    return {"houses": hs, "zones": zs}


def read_houses(path) -> tuple[list[HouseSpec], list[ZoneSpec]]:
    return houses_from_dict(_load_yaml(path), str(path))


def write_houses(path, houses, zones, comments: Sequence[str] = ()) -> Path:
    head = "".join(f"# {c}\n" for c in comments)
    return atomic_write(path, head + yaml.safe_dump(houses_to_dict(houses, zones), sort_keys=False))


def _load_yaml(path):
    path = Path(path)
    try:
        return yaml.safe_load(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read: {e.strerror}", "file", str(path)) from e
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML: {e}", "value", str(path)) from e


# ------------------------------------------------------------ CSV series
def read_forecast(path, price_path, H: int, dt: float, zones: Sequence[ZoneSpec]) -> ForecastSet:
    """Forecast CSV ``slot, T_out_degC, P_sum_kW:<zone>...`` plus price CSV
    ``slot, price_per_kWh``; both must have exactly ``H`` rows."""
    header, rows = _read_csv(path)
    need = ["slot", "T_out_degC"] + [f"P_sum_kW:{z.id}" for z in zones]
    _check_columns(header, need, path)
    _check_length(rows, H, path)
    cols = {h: [r[i] for r in rows] for i, h in enumerate(header)}
    _check_slots(cols["slot"], H, path)
    p_header, p_rows = _read_csv(price_path)
    _check_columns(p_header, ["slot", "price_per_kWh"], price_path)
    _check_length(p_rows, H, price_path)
    _check_slots([r[0] for r in p_rows], H, price_path)
    price = _floats([r[1] for r in p_rows], price_path, "price_per_kWh")
    try:
        return ForecastSet(_floats(cols["T_out_degC"], path, "T_out_degC"),
                           {z.id: _floats(cols[f"P_sum_kW:{z.id}"], path, z.id) for z in zones},
                           price, dt)
    except ValueError as e:
        raise ConfigError(str(e), "value", str(path)) from e


def write_forecast(path, price_path, forecast: ForecastSet, comments: Sequence[str] = ()):
    zones = list(forecast.P_sum_hat)
    rows = [[t, _num(forecast.T_out_hat[t])] + [_num(forecast.P_sum_hat[z][t]) for z in zones]
            for t in range(forecast.H)]
    atomic_write(path, _csv_text(["slot", "T_out_degC"] + [f"P_sum_kW:{z}" for z in zones], rows, comments))
    atomic_write(price_path, _csv_text(["slot", "price_per_kWh"],
                                       [[t, _num(p)] for t, p in enumerate(forecast.price)], comments))


def read_histories(path) -> dict[str, list[ErrorHistory]]:
    """Error-history CSV ``stream_id, time_slot, error_value`` (one row per
    sample) -> per-stream lists of per-slot histories, ordered by slot."""
    header, rows = _read_csv(path)
    _check_columns(header, ["stream_id", "time_slot", "error_value"], path)
    groups: dict[str, dict[int, list[float]]] = {}
    for n, r in enumerate(rows, start=2):
        if len(r) != 3:
            raise ConfigError(f"row {n}: expected 3 fields, got {len(r)}", "value", str(path))
        try:
            groups.setdefault(r[0], {}).setdefault(int(r[1]), []).append(float(r[2]))
        except ValueError as e:
            raise ConfigError(f"row {n}: {e}", "value", str(path)) from e
    try:
        return {s: [ErrorHistory(s, t, v) for t, v in sorted(g.items())] for s, g in groups.items()}
    except ValueError as e:
        raise ConfigError(str(e), "value", str(path)) from e


def write_histories(path, histories: Sequence[ErrorHistory], comments: Sequence[str] = ()) -> Path:
    rows = [[h.stream_id, h.time_slot, _num(v)] for h in histories for v in h.samples]
    return atomic_write(path, _csv_text(["stream_id", "time_slot", "error_value"], rows, comments))


def _check_columns(header, need, path):
    missing = [c for c in need if c not in header]
    if missing:
        raise ConfigError(f"missing column(s) {missing}", "missing-key", str(path))
    extra = [c for c in header if c not in need]
    if extra:
        raise ConfigError(f"unknown column(s) {extra}", "unknown-key", str(path))


def _check_length(rows, H, path):
    if len(rows) != H:
        raise ConfigError(f"length mismatch: {len(rows)} rows, expected H={H}", "length", str(path))


def _check_slots(col, H, path):
    try:
        slots = [int(v) for v in col]
    except ValueError as e:
        raise ConfigError(f"slot column: {e}", "value", str(path)) from e
    if slots != list(range(H)):
        raise ConfigError("slots must run 0..H-1 in order", "value", str(path))


def read_schedule(path) -> tuple[list[int], np.ndarray]:
    header, rows = _read_csv(path)
    if not header or header[0] != "house":
        raise ConfigError("first column must be 'house'", "missing-key", str(path))
    try:
        ids = [int(r[0]) for r in rows]
        x = np.array([[int(v) for v in r[1:]] for r in rows])
    except ValueError as e:
        raise ConfigError(str(e), "value", str(path)) from e
    if x.size and not np.isin(x, (0, 1)).all():
        raise ConfigError("schedule entries must be 0 or 1", "value", str(path))
    return ids, x


def write_schedule(path, houses, x, comments: Sequence[str] = ()) -> Path:
    x = np.asarray(x).astype(int)
    rows = [[h.id, *x[k].tolist()] for k, h in enumerate(houses)]
    return atomic_write(path, _csv_text(["house"] + [f"t{t}" for t in range(x.shape[1])], rows, comments))


# --------------------------------------------------------------- manifest
VARIANT_NAMES = ("deterministic", "kdea-dro", "ga-dro", "ro")


@dataclass(frozen=True)
class ExperimentManifest:
    """One experiment: input files (paths relative to ``base_dir``), model
    settings, solver limits, Monte Carlo settings and output directory.

    ``beta_power`` and ``beta_temp`` are tuples; more than one value in
    either makes the pipeline run the full grid (KDE-DRO style sweep).
    """

    houses: str
    forecast: str
    price: str
    errors: tuple
    H: int
    dt_h: float
    variant: str = "kdea-dro"
    beta_power: tuple = (0.1,)
    beta_temp: tuple = (0.1,)
    radius_mode: str = "constant"
    bandwidth_power_kW: float = 0.2
    bandwidth_temp_degC: float = 0.1
    ro_coverage: float = 0.95
    gap: float = 0.01
    time_limit_s: float = 600.0
    node_limit: int = 2000
    trials: int = 200
    seed: int = 0
    fine_dt_s: float = 5.0
    out: str = "out"
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        src = "manifest"
        if self.variant not in VARIANT_NAMES:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANT_NAMES}", "value", src)
        if self.radius_mode.replace("-", "_") not in ("constant", "sqrt_t"):
            raise ConfigError(f"unknown radius mode {self.radius_mode!r}", "value", src)
        object.__setattr__(self, "beta_power", _beta_tuple(self.beta_power, "beta_power"))
        object.__setattr__(self, "beta_temp", _beta_tuple(self.beta_temp, "beta_temp"))
        object.__setattr__(self, "errors", tuple(str(e) for e in (
            [self.errors] if isinstance(self.errors, str) else self.errors)))
        checks = [(self.H >= 1, "H must be >= 1"), (self.dt_h > 0, "dt_h must be positive"),
                  (self.bandwidth_power_kW > 0, "bandwidth_power_kW must be positive"),
                  (self.bandwidth_temp_degC > 0, "bandwidth_temp_degC must be positive"),
                  (0 < self.ro_coverage < 1, "ro_coverage must lie in (0, 1)"),
                  (self.gap >= 0, "gap must be nonnegative"),
                  (self.time_limit_s > 0, "time_limit_s must be positive"),
                  (self.node_limit >= 1, "node_limit must be >= 1"),
                  (self.trials >= 1, "trials must be >= 1"),
                  (self.fine_dt_s > 0, "fine_dt_s must be positive")]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg, "value", src)

    @property
    def is_grid(self) -> bool:
        return len(self.beta_power) > 1 or len(self.beta_temp) > 1

    def path(self, name: str) -> Path:
        p = Path(name)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def out_dir(self) -> Path:
        return self.path(self.out)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "base_dir"}
        d["errors"] = list(self.errors)
        d["beta_power"] = list(self.beta_power)
        d["beta_temp"] = list(self.beta_temp)
        return d

    def with_overrides(self, **kw) -> "ExperimentManifest":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self


def _beta_tuple(v, name):
    vals = (v,) if isinstance(v, (int, float)) else tuple(v)
    if not vals:
        raise ConfigError(f"{name}: at least one risk level required", "value", "manifest")
    try:
        vals = tuple(float(b) for b in vals)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name}: {e}", "value", "manifest") from e
    for b in vals:
        if not 0 < b <= 1:
            raise ConfigError(f"{name}: risk level {b} outside (0, 1]", "value", "manifest")
    return vals


_MANIFEST_KEYS = {f.name for f in fields(ExperimentManifest)} - {"base_dir"}


def manifest_from_dict(doc, base_dir=".", source: str = "manifest") -> ExperimentManifest:
    if not isinstance(doc, Mapping):
        raise ConfigError("top level must be a mapping", "value", source)
    unknown = set(doc) - _MANIFEST_KEYS
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)}", "unknown-key", source)
    missing = [k for k in ("houses", "forecast", "price", "errors", "H", "dt_h") if k not in doc]
    if missing:
        raise ConfigError(f"missing key(s) {missing}", "missing-key", source)
    try:
        return ExperimentManifest(**dict(doc), base_dir=str(base_dir))
    except TypeError as e:
        raise ConfigError(str(e), "value", source) from e


def read_manifest(path) -> ExperimentManifest:
    path = Path(path)
    return manifest_from_dict(_load_yaml(path), path.parent, str(path))


def manifest_yaml(manifest: ExperimentManifest) -> str:
    return yaml.safe_dump(manifest.to_dict(), sort_keys=False)


def manifest_hash(manifest: ExperimentManifest) -> str:
    """SHA-256 over the resolved settings and the bytes of every input file."""
    h = hashlib.sha256(json.dumps(manifest.to_dict(), sort_keys=True).encode())
    for name in (manifest.houses, manifest.forecast, manifest.price, *manifest.errors):
        p = manifest.path(name)
        try:
            h.update(p.read_bytes())
        except OSError as e:
            raise ConfigError(f"cannot read {p}: {e.strerror}", "file", "manifest") from e
    return h.hexdigest()


@dataclass(frozen=True)
class Inputs:
    """Everything a manifest points at, parsed and cross-checked."""

    manifest: ExperimentManifest
    houses: list
    zones: list
    forecast: ForecastSet
    temp_histories: list
    power_histories: dict
    digest: str


def parse_configs(manifest: ExperimentManifest) -> Inputs:
    """Load and validate every file referenced by ``manifest``."""
    digest = manifest_hash(manifest)
    houses, zones = read_houses(manifest.path(manifest.houses))
    forecast = read_forecast(manifest.path(manifest.forecast), manifest.path(manifest.price),
                             manifest.H, manifest.dt_h, zones)
    streams: dict[str, list[ErrorHistory]] = {}
    for name in manifest.errors:
        for sid, hist in read_histories(manifest.path(name)).items():
            if sid in streams:
                raise ConfigError(f"stream {sid!r} defined twice", "value", name)
            streams[sid] = hist
    need = [TEMP_STREAM] + [POWER_PREFIX + z.id for z in zones]
    missing = [s for s in need if s not in streams]
    if missing:
        raise ConfigError(f"no error history for stream(s) {missing}", "missing-key", "errors")
    for s in need:
        slots = [h.time_slot for h in streams[s]]
        if slots != list(range(manifest.H)):
            raise ConfigError(f"stream {s!r}: histories for {len(slots)} slots, expected slots 0..{manifest.H - 1}",
                              "length", "errors")
        short = [h.time_slot for h in streams[s] if len(h) < 2]
        if short:
            raise ConfigError(f"stream {s!r}: fewer than 2 samples in slot(s) {short[:5]}", "value", "errors")
    return Inputs(manifest, houses, zones, forecast, streams[TEMP_STREAM],
                  {z.id: streams[POWER_PREFIX + z.id] for z in zones}, digest)
