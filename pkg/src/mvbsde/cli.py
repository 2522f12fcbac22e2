"""Command line entry point (``mvbsde``)."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import harness
from .config import ExperimentConfig
from .errors import ConfigError, ValidationError
from .presets import experiment_names

SUBCOMMAND_TASK = {"run": None, "sweep-epsilon": "sweep", "compare-pde": "compare",
                   "probe-continuity": "continuity"}


def _basis_override(text: str) -> list[str]:
    """``poly:4``, ``indicator:32`` or ``saturating``."""
    kind, _, arg = text.partition(":")
    if kind in ("poly", "polynomial"):
        return ["basis.kind=\"polynomial\"", f"basis.degree={int(arg or 2)}"]
    if kind == "indicator":
        return ["basis.kind=\"indicator\"", "basis.saturate=false", f"basis.n_bins={int(arg or 16)}"]
    if kind == "saturating":
        return ["basis.kind=\"indicator\"", "basis.saturate=true", "basis.ridge=0.0"]
    raise ConfigError(f"unknown basis {text!r}; use poly:<degree>, indicator:<bins> or saturating")


def _experiment_parser(sub, name: str, help_text: str) -> None:
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--config", type=Path, help="TOML config file merged over the preset")
    p.add_argument("--preset", choices=experiment_names(), help="named experiment to start from")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable), e.g. --set grid.n_steps=200")
    p.add_argument("--eps", type=float, help="penalization parameter")
    p.add_argument("--eps-sweep", help="comma separated, strictly decreasing schedule")
    p.add_argument("--picard-tol", type=float, help="Picard stopping tolerance")
    p.add_argument("--basis", help="poly:<degree>, indicator:<bins> or saturating")
    p.add_argument("--seed", type=int, help="64-bit master seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads (0 = all cores)")
    p.add_argument("--out", type=Path, help="output directory (default: outputs.dir)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvbsde", description="Penalized mean-field backward SDE solver.")
    sub = parser.add_subparsers(dest="command", required=True)
    _experiment_parser(sub, "run", "run the task named in the config")
    _experiment_parser(sub, "sweep-epsilon", "solve along a penalization schedule and fit the rate")
    _experiment_parser(sub, "compare-pde", "compare the particle value function with finite differences")
    _experiment_parser(sub, "probe-continuity", "measure continuity in the terminal condition")
    v = sub.add_parser("validate-operators", help="property suite over all shipped operator kinds")
    v.add_argument("--samples", type=float, default=10_000, help="random (x, x', eps) triples per kind")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", type=Path, help="write the report as JSON here")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = list(args.overrides)
    task = SUBCOMMAND_TASK[args.command]
    if task is not None:
        overrides.append(f"task=\"{task}\"")
    if args.eps is not None:
        overrides.append(f"penalty.eps={args.eps!r}")
    if args.eps_sweep:
        values = [float(v) for v in args.eps_sweep.split(",") if v.strip()]
        overrides.append(f"penalty.schedule={values!r}")
    if args.picard_tol is not None:
        overrides.append(f"picard.tol={args.picard_tol!r}")
    if args.basis:
        overrides.extend(_basis_override(args.basis))
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    text = args.config.read_text(encoding="utf-8") if args.config else None
    return ExperimentConfig.resolve(args.preset, text, overrides)


def _threads(n: int) -> int:
    return os.cpu_count() or 1 if n <= 0 else n


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate-operators":
        report = harness.validate_operators(int(args.samples), args.seed)
        for name, info in report["kinds"].items():
            worst = max(info["max_residuals"].values())
            status = "ok" if not info["failed"] else "FAILED " + ", ".join(info["failed"])
            print(f"{name:24s} max residual {worst:.2e}  {status}")
        if args.out:
            args.out.parent.mkdir(parents=True, exist_ok=True)
            args.out.write_text(harness.dumps_json(report), encoding="utf-8")
        return 0 if report["passed"] else 1
    try:
        cfg = resolve_config(args)
    except ValidationError as exc:
        code, body = harness.error_payload(exc)
        print(json.dumps(body, sort_keys=True), file=sys.stderr)
        return code
    code, body = harness.run(cfg, args.out, _threads(args.threads))
    if code == harness.EXIT_OK:
        out = args.out or Path(cfg["outputs"]["dir"])
        print(f"wrote {out} (config {body['config_hash'][:12]})")
    else:
        print(json.dumps(body, sort_keys=True), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
