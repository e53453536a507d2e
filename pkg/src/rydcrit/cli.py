"""Command-line entry points.

One subcommand per pipeline stage plus ``pipeline`` to chain them.  Exit
codes sort failures by kind so batch drivers can triage without parsing
stderr: 2 config, 3 capacity, 4 convergence/integration, 5 unstable
bootstrap, 1 anything else the package raises.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from .config import ExperimentConfig, load_config
from .errors import (
    BootstrapUnstableError,
    CapacityError,
    ConfigError,
    ConvergenceError,
    IntegrationError,
    RydcritError,
)
from .pipeline import (
    finalize,
    new_run,
    run_analyze,
    run_gap_scan,
    run_kz,
    run_pipeline,
    run_prepare,
    run_ramp,
)

_STAGES = {
    "gap-scan": run_gap_scan,
    "ramp": run_ramp,
    "prepare": run_prepare,
    "kz": run_kz,
    "analyze": run_analyze,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rydcrit",
        description="Adiabatic preparation and measurement of Ising-critical Rydberg arrays.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("gap-scan", "scan the excitation gap over a detuning grid"),
        ("ramp", "synthesize the configured detuning schedule"),
        ("prepare", "evolve through the ramp and sample snapshots"),
        ("kz", "sweep-rate scan of the density-response peak"),
        ("analyze", "correlators and decay-model fits from snapshots"),
        ("pipeline", "run every stage the config declares"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="config path or bundled name")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory (default runs/<name>)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for trajectories")
        p.add_argument(
            "--plot-data", action="store_true", help="also write per-sweep curve files"
        )
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = ExperimentConfig.from_dict({**cfg.data, "seed": args.seed})
    return cfg


def main(argv: Optional[list[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        outdir = args.out if args.out is not None else f"runs/{cfg.name}"
        if args.command == "pipeline":
            manifest = run_pipeline(
                cfg, outdir, jobs=args.jobs, plot_data=args.plot_data
            )
        else:
            state = new_run(cfg, outdir, jobs=args.jobs, plot_data=args.plot_data)
            _STAGES[args.command](state)
            manifest = finalize(state)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConvergenceError, IntegrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except BootstrapUnstableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except RydcritError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{cfg.name}: wrote {len(manifest['files'])} files to {outdir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
