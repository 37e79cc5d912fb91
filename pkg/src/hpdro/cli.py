"""Command-line front end.

``hpdro <command> --manifest PATH [overrides]`` with commands ``fit``,
``build``, ``solve``, ``simulate``, ``montecarlo``, ``report`` and
``pipeline``. Exit codes: 0 success, 1 unexpected failure, 2 configuration
error, 3 infeasible model, 4 solver limit reached without an incumbent.
The ``HPDRO_LOG`` environment variable sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__, pipeline
from .io import VARIANT_NAMES, ConfigError, parse_configs, read_manifest
from .model import InfeasibleModelError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_TIMEOUT = 0, 1, 2, 3, 4
COMMANDS = ("fit", "build", "solve", "simulate", "montecarlo", "report", "pipeline")

log = logging.getLogger("hpdro")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", required=True, help="experiment manifest (YAML)")
    common.add_argument("--variant", choices=VARIANT_NAMES)
    common.add_argument("--beta-power", type=float, nargs="+", metavar="BETA",
                        help="power risk level(s); several values run a grid (pipeline only)")
    common.add_argument("--beta-temp", type=float, nargs="+", metavar="BETA",
                        help="temperature risk level(s); several values run a grid (pipeline only)")
    common.add_argument("--radius-mode", choices=("constant", "sqrt-t"))
    common.add_argument("--gap", type=float, help="relative MIP gap tolerance")
    common.add_argument("--time-limit", type=float, help="solver time limit in seconds")
    common.add_argument("--node-limit", type=int, help="solver node limit")
    common.add_argument("--trials", type=int, help="Monte Carlo trials")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--export-mps", metavar="PATH", help="also write the MILP as fixed-form MPS")
    p = argparse.ArgumentParser(prog="hpdro", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"hpdro {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {"fit": "fit nominal error models and write per-slot margins",
             "build": "assemble the MILP (summary, optional MPS)",
             "solve": "solve the MILP and write the schedule",
             "simulate": "nominal replay of the schedule as plot data",
             "montecarlo": "Monte Carlo replay of the schedule and the unscheduled baseline",
             "report": "summarise Monte Carlo trials",
             "pipeline": "run every stage (or a risk-level grid)"}
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return p


def _configure_logging():
    level = os.environ.get("HPDRO_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _overrides(args) -> dict:
    return {"variant": args.variant, "beta_power": args.beta_power, "beta_temp": args.beta_temp,
            "radius_mode": args.radius_mode, "gap": args.gap, "time_limit_s": args.time_limit,
            "node_limit": args.node_limit, "trials": args.trials, "seed": args.seed, "out": args.out}


def _fail(stage: str, msg: str, code: int) -> int:
    print(f"hpdro: [{stage}] {msg}", file=sys.stderr)
    return code


def _solution_code(sol) -> int:
    if sol.status == "infeasible":
        return EXIT_INFEASIBLE
    if sol.x is None:
        return EXIT_TIMEOUT
    return EXIT_OK


def run(args) -> int:
    stage = "config"
    try:
        manifest = read_manifest(args.manifest)
        if args.out is not None:
            # resolve --out against the working directory, not the manifest
            args.out = os.path.abspath(args.out)
        manifest = manifest.with_overrides(**_overrides(args))
        inputs = parse_configs(manifest)
        stage = args.command
        if args.command == "fit":
            pipeline.stage_fit(inputs)
        elif args.command == "build":
            pipeline.stage_build(inputs, args.export_mps)
        elif args.command == "solve":
            return _report_solution(pipeline.stage_solve(inputs, args.export_mps))
        elif args.command == "simulate":
            pipeline.stage_simulate(inputs)
        elif args.command == "montecarlo":
            pipeline.stage_montecarlo(inputs)
        elif args.command == "report":
            sys.stdout.write(pipeline.stage_report(inputs))
        else:
            result = pipeline.run_pipeline(inputs, args.export_mps)
            if isinstance(result, list):
                sys.stdout.write(pipeline.grid_text(inputs, result))
                codes = [_solution_code(c.solution) for c in result]
                return max(codes) if all(c != EXIT_OK for c in codes) else EXIT_OK
            code = _report_solution(result)
            if code == EXIT_OK:
                sys.stdout.write((inputs.manifest.out_dir / pipeline.REPORT_FILE).read_text())
            return code
        return EXIT_OK
    except ConfigError as e:
        return _fail(stage, f"configuration error ({e.kind}): {e}", EXIT_CONFIG)
    except InfeasibleModelError as e:
        return _fail(stage, f"infeasible model ({e.tag}): {e}", EXIT_INFEASIBLE)
    except pipeline.StageError as e:
        return _fail(e.stage, str(e).split("] ", 1)[-1], EXIT_FAIL)
    except (OSError, ValueError) as e:
        return _fail(stage, f"{type(e).__name__}: {e}", EXIT_FAIL)


def _report_solution(sol) -> int:
    code = _solution_code(sol)
    if code == EXIT_INFEASIBLE:
        return _fail("solve", "model is infeasible", code)
    if code == EXIT_TIMEOUT:
        return _fail("solve", "solver limit reached without an incumbent", code)
    if sol.status == "timeout":
        log.warning("solver limit reached at gap %.4f; keeping the incumbent", sol.gap)
    return EXIT_OK


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
