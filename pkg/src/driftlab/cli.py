"""Command-line entry point: ``driftlab <experiment> --config FILE --out DIR``.

Exit codes: 0 all checks pass, 1 a check failed, 2 invalid configuration,
3 numerical failure (CFL violation, Picard divergence, quadrature failure).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

EXPERIMENTS = ("constants", "morrey", "decompose", "solve", "scaling", "mc", "counterexample", "anisotropic")

log = logging.getLogger("driftlab")


def _common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="JSON experiment config")
    parser.add_argument("--out", default=default if suppress else "artifacts", help="artifact directory (default: artifacts)")
    parser.add_argument("--seed", type=int, default=default, help="override the config seed")
    parser.add_argument("--threads", type=int, default=default if suppress else 1, help="worker threads (default: 1)")
    parser.add_argument("-v", "--verbose", action="store_true", default=default if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="driftlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"driftlab {__version__}")
    _common(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        _common(sp, suppress=True)
    rp = sub.add_parser("report", help="aggregate summary.json files under an artifact directory")
    rp.add_argument("directory", nargs="?", default=None, help="artifact directory (default: --out)")
    _common(rp, suppress=True)
    return p


def _with_seed(cfg, seed: int | None):
    if seed is None:
        return cfg
    if cfg.kind == "mc":
        return cfg.model_copy(update={"mc": cfg.mc.model_copy(update={"seed": seed})})
    if cfg.kind == "morrey":
        return cfg.model_copy(update={"random_seed": seed})
    return cfg


def run_experiment(kind: str, config: str | None, out: str, seed: int | None = None, threads: int = 1) -> int:
    from .counterexamples import QuadratureError
    from .experiments import RunResult, run_config, write_artifacts
    from .pde import NumericalError

    if not config:
        print(f"driftlab {kind}: --config is required", file=sys.stderr)
        return EXIT_CONFIG
    if threads < 1:
        print("driftlab: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = _with_seed(load_config(config, kind), seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(out)
    try:
        res = run_config(cfg, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, QuadratureError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        write_artifacts(RunResult(kind, cfg.model_dump()), out_dir, status="NUMERICAL_FAILURE", error=str(exc))
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_artifacts(res, out_dir)
    for c in res.checks:
        log.info("%s  %s  measured=%.6g", c.status, c.name, c.measured)
    print(f"{kind}: {'PASS' if res.passed else 'FAIL'} ({sum(c.passed for c in res.checks)}/{len(res.checks)} checks) -> {out_dir}")
    return EXIT_OK if res.passed else EXIT_FAIL


def run_report(directory: str) -> int:
    from .experiments import aggregate

    root = Path(directory)
    if not root.is_dir():
        print(f"report: {root} is not a directory", file=sys.stderr)
        return EXIT_CONFIG
    rows, text = aggregate(root)
    (root / "report.md").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_FAIL if any(r["status"] != "PASS" for r in rows) else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "report":
        return run_report(args.directory or args.out)
    return run_experiment(args.command, args.config, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())
