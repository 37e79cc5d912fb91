"""Experiment pipeline: fit -> build -> solve -> Monte Carlo -> report.

Every stage writes its artifact into the manifest's output directory and
the next stage can start from those files, so each step can be rerun on
its own. All files carry a provenance header with the tool version and
the manifest hash; none carries a timestamp or a wall-clock time, so a
rerun from the same manifest is byte-identical.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import EvaluationReport, ScenarioSet, evaluate_baseline, monte_carlo_evaluate, plot_data
from .io import (ConfigError, Inputs, _csv_text, _num, _read_csv, atomic_write, manifest_yaml, read_schedule,
                 write_schedule)
from .model import MilpInstance, ScheduleSolution, build_from_margins, energy_cost
from .solver import BnbConfig, export_mps, solve_milp
from .uncertainty import dro_margin, error_interval, fit_streams, radius_schedule

log = logging.getLogger(__name__)

MARGINS_FILE = "margins.csv"
SCHEDULE_FILE = "schedule.csv"
SOLUTION_FILE = "solution.txt"
INSTANCE_FILE = "instance.txt"
TRIALS_FILE = "trials.csv"
REPORT_FILE = "report.txt"
PLOT_FILE = "plot_data.csv"
MANIFEST_FILE = "manifest.resolved.yaml"
GRID_FILE = "grid.csv"


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def provenance(inputs: Inputs) -> list[str]:
    return [f"hpdro {__version__} manifest_sha256={inputs.digest}"]


# ------------------------------------------------------------------- fit
@dataclass(frozen=True)
class Margins:
    """Per-slot constraint shifts of one variant at one risk-level pair."""

    variant: str
    beta_power: float
    beta_temp: float
    power: dict  # zone id -> (H,) kW
    temp_hi: np.ndarray
    temp_lo: np.ndarray


def compute_margins(inputs: Inputs, variant: str, beta_power: float, beta_temp: float) -> Margins:
    """Fit the nominal models the variant needs and evaluate its margins.

    KDE-DRO and Gaussian-DRO use the KL-ball margins (lower temperature
    margins from the negated samples); RO uses the coverage intervals of
    the raw samples; the deterministic model has zero margins.
    """
    m = inputs.manifest
    H = m.H
    zones = [z.id for z in inputs.zones]
    if variant == "deterministic":
        zero = np.zeros(H)
        return Margins(variant, beta_power, beta_temp, {z: zero for z in zones}, zero, zero)
    if variant == "ro":
        power = {}
        for z in zones:
            pooled = np.concatenate([h.samples for h in inputs.power_histories[z]])
            power[z] = np.full(H, error_interval(pooled, m.ro_coverage)[1])
        iv = np.array([error_interval(h.samples, m.ro_coverage) for h in inputs.temp_histories])
        return Margins(variant, beta_power, beta_temp, power, iv[:, 1], -iv[:, 0])
    kind = "kde" if variant == "kdea-dro" else "gaussian"
    eta = radius_schedule(beta_power, H, m.radius_mode, m.dt_h)
    chi = radius_schedule(beta_temp, H, m.radius_mode, m.dt_h)
    tm = fit_streams(inputs.temp_histories, kind, m.bandwidth_temp_degC)
    hi = np.array([dro_margin(md, r) for md, r in zip(tm, chi)])
    lo = np.array([dro_margin(md.negated(), r) for md, r in zip(tm, chi)])
    power = {}
    for z in zones:
        pm = fit_streams(inputs.power_histories[z], kind, m.bandwidth_power_kW)
        power[z] = np.array([dro_margin(md, r) for md, r in zip(pm, eta)])
    return Margins(variant, beta_power, beta_temp, power, hi, lo)


def write_margins(path, inputs: Inputs, mg: Margins) -> Path:
    zones = list(mg.power)
    header = ["slot", "temp_hi_degC", "temp_lo_degC"] + [f"power_kW:{z}" for z in zones]
    rows = [[t, _num(mg.temp_hi[t]), _num(mg.temp_lo[t])] + [_num(mg.power[z][t]) for z in zones]
            for t in range(len(mg.temp_hi))]
    meta = provenance(inputs) + [f"variant={mg.variant} beta_power={mg.beta_power!r} beta_temp={mg.beta_temp!r}"]
    return atomic_write(path, _csv_text(header, rows, meta))


def read_margins(path, inputs: Inputs) -> Margins:
    path = Path(path)
    meta = {}
    for line in path.read_text().splitlines():
        if line.startswith("# variant="):
            meta = dict(kv.split("=", 1) for kv in line[2:].split())
    if not meta:
        raise ConfigError("missing variant header line", "value", str(path))
    header, rows = _read_csv(path)
    cols = {h: np.array([float(r[i]) for r in rows]) for i, h in enumerate(header)}
    if len(rows) != inputs.manifest.H:
        raise ConfigError(f"length mismatch: {len(rows)} rows, expected H={inputs.manifest.H}", "length", str(path))
    power = {z.id: cols[f"power_kW:{z.id}"] for z in inputs.zones}
    return Margins(meta["variant"], float(meta["beta_power"]), float(meta["beta_temp"]), power,
                   cols["temp_hi_degC"], cols["temp_lo_degC"])


# ----------------------------------------------------------- build/solve
def build_instance(inputs: Inputs, mg: Margins) -> MilpInstance:
    return build_from_margins(inputs.houses, inputs.zones, inputs.forecast, mg.power, mg.temp_hi,
                              mg.temp_lo, mg.variant)


def instance_summary(inputs: Inputs, inst: MilpInstance) -> str:
    tags = {}
    for t in inst.row_tags:
        tags[t] = tags.get(t, 0) + 1
    lines = [f"# {c}" for c in provenance(inputs)]
    lines += [f"variant = {inst.variant}", f"binaries = {inst.binaries.size}",
              f"continuous = {int((~inst.integer).sum())}", f"rows = {inst.n_rows}"]
    lines += [f"rows.{t} = {n}" for t, n in tags.items()]
    return "\n".join(lines) + "\n"


def solver_config(inputs: Inputs) -> BnbConfig:
    m = inputs.manifest
    return BnbConfig(gap_tol=m.gap, time_limit=m.time_limit_s, node_limit=m.node_limit)


def solve_instance(inputs: Inputs, inst: MilpInstance) -> ScheduleSolution:
    sol = solve_milp(inst, solver_config(inputs))
    log.info("solve %s: status=%s objective=%.6f gap=%.6f nodes=%d", inst.variant, sol.status,
             sol.objective_value, sol.gap, sol.nodes)
    return sol


def solution_text(inputs: Inputs, inst: MilpInstance, sol: ScheduleSolution) -> str:
    lines = [f"# {c}" for c in provenance(inputs)]
    lines += [f"variant = {inst.variant}", f"status = {sol.status}",
              f"objective = {_num(sol.objective_value)}", f"bound = {_num(sol.bound)}",
              f"gap = {_num(sol.gap)}", f"nodes = {sol.nodes}"]
    if sol.x is not None:
        zones = {z.id: z for z in inputs.zones}
        elec = energy_cost(sol.x, inputs.houses, inputs.forecast)
        peak = sum(zones[z].psi * p for z, p in sol.P_max.items())
        lines += [f"P_max_kW.{z} = {_num(p)}" for z, p in sol.P_max.items()]
        lines += [f"peak_cost = {_num(peak)}", f"elec_cost = {_num(elec)}"]
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------ evaluation
def scenarios(inputs: Inputs) -> ScenarioSet:
    """Monte Carlo draws: Gaussian temperature errors from the fitted
    per-slot moments, transformed chi-square power errors per zone."""
    m = inputs.manifest
    gm = fit_streams(inputs.temp_histories, "gaussian")
    return ScenarioSet.generate(m.trials, m.H, gm, inputs.zones, m.seed)


def evaluate(inputs: Inputs, x, scen: ScenarioSet, label: str) -> EvaluationReport:
    rep = monte_carlo_evaluate(x, inputs.houses, inputs.zones, inputs.forecast, scen,
                               fine_dt=inputs.manifest.fine_dt_s, label=label)
    return rep


def baseline(inputs: Inputs, scen: ScenarioSet) -> EvaluationReport:
    return evaluate_baseline(inputs.houses, inputs.zones, inputs.forecast, scen,
                             fine_dt=inputs.manifest.fine_dt_s)


def write_trials(path, inputs: Inputs, reports) -> Path:
    rows = [[r.label, *vals[:1], *(_num(v) for v in vals[1:])] for r in reports for vals in r.rows()]
    return atomic_write(path, _csv_text(["label", "trial", "P_max_kW", "peak_cost", "elec_cost", "comfort"],
                                        rows, provenance(inputs)))


def read_trials(path) -> list[EvaluationReport]:
    header, rows = _read_csv(path)
    if header != ["label", "trial", "P_max_kW", "peak_cost", "elec_cost", "comfort"]:
        raise ConfigError(f"unexpected header {header}", "value", str(path))
    out = {}
    for r in rows:
        out.setdefault(r[0], []).append([float(v) for v in r[2:]])
    return [EvaluationReport(*np.array(v).T, label=k) for k, v in out.items()]


_METRIC_NAMES = (("P_max", "P_max_kW"), ("peak_cost", "peak_cost"), ("elec_cost", "elec_cost"),
                 ("comfort", "comfort"))


def report_text(inputs: Inputs, reports) -> str:
    """Best / worst / mean / standard error per metric and strategy."""
    lines = [f"# {c}" for c in provenance(inputs)]
    lines.append(f"trials = {reports[0].trials}")
    lines.append(f"{'metric':<12}{'strategy':<16}{'best':>14}{'worst':>14}{'mean':>14}{'se':>14}")
    for key, name in _METRIC_NAMES:
        for r in reports:
            s = r.summary()[key]
            lines.append(f"{name:<12}{r.label:<16}" + "".join(f"{s[k]:>14.6f}" for k in ("best", "worst", "mean", "se")))
    if len(reports) > 1:
        base = reports[-1].summary()
        for r in reports[:-1]:
            s = r.summary()
            for key, name in (("P_max", "P_max_kW"), ("elec_cost", "elec_cost")):
                red = 1.0 - s[key]["mean"] / base[key]["mean"]
                lines.append(f"reduction.{name}.{r.label} = {red:.6f}")
    return "\n".join(lines) + "\n"


def write_plot_data(path, inputs: Inputs, x) -> Path:
    d = plot_data(x, inputs.houses, inputs.zones, inputs.forecast, inputs.manifest.fine_dt_s)
    keys = list(d)
    rows = [[int(d["slot"][t])] + [_num(d[k][t]) for k in keys[1:]] for t in range(inputs.manifest.H)]
    return atomic_write(path, _csv_text(keys, rows, provenance(inputs)))


# ------------------------------------------------------------------ stages
def _single_pair(inputs: Inputs, stage: str):
    m = inputs.manifest
    if m.is_grid:
        raise StageError(stage, "a risk-level grid is only supported by the pipeline command")
    return m.beta_power[0], m.beta_temp[0]


def stage_fit(inputs: Inputs) -> Margins:
    bp, bt = _single_pair(inputs, "fit")
    mg = compute_margins(inputs, inputs.manifest.variant, bp, bt)
    write_margins(inputs.manifest.out_dir / MARGINS_FILE, inputs, mg)
    return mg


def _load_margins(inputs: Inputs, stage: str) -> Margins:
    path = inputs.manifest.out_dir / MARGINS_FILE
    if path.exists():
        mg = read_margins(path, inputs)
        bp, bt = _single_pair(inputs, stage)
        if (mg.variant, mg.beta_power, mg.beta_temp) == (inputs.manifest.variant, bp, bt):
            return mg
        log.info("%s: margins file is for another setting; refitting", stage)
    return stage_fit(inputs)


def stage_build(inputs: Inputs, export: str | None = None) -> MilpInstance:
    inst = build_instance(inputs, _load_margins(inputs, "build"))
    atomic_write(inputs.manifest.out_dir / INSTANCE_FILE, instance_summary(inputs, inst))
    if export:
        export_mps(inst, export)
    return inst


def stage_solve(inputs: Inputs, export: str | None = None) -> ScheduleSolution:
    inst = stage_build(inputs, export)
    sol = solve_instance(inputs, inst)
    out = inputs.manifest.out_dir
    atomic_write(out / SOLUTION_FILE, solution_text(inputs, inst, sol))
    if sol.x is not None:
        write_schedule(out / SCHEDULE_FILE, inputs.houses, sol.x, provenance(inputs))
    return sol


def load_schedule(inputs: Inputs) -> np.ndarray:
    path = inputs.manifest.out_dir / SCHEDULE_FILE
    if not path.exists():
        raise StageError("schedule", f"{path} not found; run the solve stage first")
    ids, x = read_schedule(path)
    if ids != [h.id for h in inputs.houses] or x.shape != (len(inputs.houses), inputs.manifest.H):
        raise ConfigError("schedule does not match the house config or horizon", "length", str(path))
    return x


def stage_simulate(inputs: Inputs) -> Path:
    return write_plot_data(inputs.manifest.out_dir / PLOT_FILE, inputs, load_schedule(inputs))


def stage_montecarlo(inputs: Inputs) -> list[EvaluationReport]:
    x = load_schedule(inputs)
    scen = scenarios(inputs)
    reports = [evaluate(inputs, x, scen, inputs.manifest.variant), baseline(inputs, scen)]
    write_trials(inputs.manifest.out_dir / TRIALS_FILE, inputs, reports)
    return reports


def stage_report(inputs: Inputs) -> str:
    path = inputs.manifest.out_dir / TRIALS_FILE
    if not path.exists():
        raise StageError("report", f"{path} not found; run the montecarlo stage first")
    text = report_text(inputs, read_trials(path))
    atomic_write(inputs.manifest.out_dir / REPORT_FILE, text)
    return text


def write_resolved_manifest(inputs: Inputs) -> Path:
    head = "".join(f"# {c}\n" for c in provenance(inputs))
    return atomic_write(inputs.manifest.out_dir / MANIFEST_FILE, head + manifest_yaml(inputs.manifest))


@dataclass
class GridCell:
    beta_power: float
    beta_temp: float
    solution: ScheduleSolution
    report: EvaluationReport | None


def run_grid(inputs: Inputs) -> list[GridCell]:
    """Solve and evaluate every (beta_power, beta_temp) pair on common scenarios."""
    m = inputs.manifest
    scen = scenarios(inputs)
    cells = []
    for bp in m.beta_power:
        for bt in m.beta_temp:
            inst = build_instance(inputs, compute_margins(inputs, m.variant, bp, bt))
            sol = solve_instance(inputs, inst)
            rep = evaluate(inputs, sol.x, scen, m.variant) if sol.x is not None else None
            cells.append(GridCell(bp, bt, sol, rep))
    return cells


def grid_text(inputs: Inputs, cells: list[GridCell]) -> str:
    """Three matrices (rows: power risk level, columns: temperature risk level)."""
    m = inputs.manifest
    lines = [f"# {c}" for c in provenance(inputs)]
    lookup = {(c.beta_power, c.beta_temp): c for c in cells}
    for key, title in (("P_max", "mean P_max (kW)"), ("elec_cost", "mean electricity cost"),
                       ("comfort", "mean comfort rate")):
        lines.append(f"[{title}]")
        lines.append(f"{'beta_power / beta_temp':<24}" + "".join(f"{bt:>14g}" for bt in m.beta_temp))
        for bp in m.beta_power:
            row = []
            for bt in m.beta_temp:
                rep = lookup[(bp, bt)].report
                row.append(f"{rep.summary()[key]['mean']:>14.6f}" if rep is not None else f"{'n/a':>14}")
            lines.append(f"{bp:<24g}" + "".join(row))
    return "\n".join(lines) + "\n"


def write_grid(inputs: Inputs, cells: list[GridCell]) -> None:
    out = inputs.manifest.out_dir
    rows = []
    for c in cells:
        s = c.report.summary() if c.report is not None else None
        rows.append([_num(c.beta_power), _num(c.beta_temp), c.solution.status, _num(c.solution.objective_value),
                     _num(c.solution.gap)] + ([_num(s[k]["mean"]) for k, _ in _METRIC_NAMES] if s else ["", "", "", ""]))
    atomic_write(out / GRID_FILE, _csv_text(["beta_power", "beta_temp", "status", "objective", "gap",
                                             "P_max_kW", "peak_cost", "elec_cost", "comfort"], rows,
                                            provenance(inputs)))
    atomic_write(out / REPORT_FILE, grid_text(inputs, cells))


def run_pipeline(inputs: Inputs, export: str | None = None):
    """Full run. Returns the solution (single pair) or the grid cells."""
    write_resolved_manifest(inputs)
    if inputs.manifest.is_grid:
        cells = run_grid(inputs)
        write_grid(inputs, cells)
        return cells
    sol = stage_solve(inputs, export)
    if sol.x is None:
        return sol
    stage_simulate(inputs)
    stage_montecarlo(inputs)
    stage_report(inputs)
    return sol
