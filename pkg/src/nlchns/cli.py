"""Command-line entry point: ``nlchns <subcommand> --config cfg.json --out dir``."""

from __future__ import annotations

import argparse
import json
import sys

from . import experiments as ex
from .reports import _plain

DEFAULT_EPS = (0.2, 0.1, 0.05, 0.025)
DEFAULT_DELTA = (1e-2, 1e-3, 1e-4)
DEFAULT_MODES = (8, 16, 32)


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON simulation config (defaults to the reference config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="concurrent member runs in sweeps")
    common.add_argument("--seed", type=int, default=None, help="override the initial-data and check seed")

    p = argparse.ArgumentParser(prog="nlchns", description=__doc__, parents=[common])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="single simulation")
    s = sub.add_parser("sweep-epsilon", parents=[common], help="continuation in the regularization epsilon")
    s.add_argument("--values", type=_floats, default=list(DEFAULT_EPS))
    s = sub.add_parser("sweep-delta", parents=[common], help="continuation in the hyperviscosity delta")
    s.add_argument("--values", type=_floats, default=list(DEFAULT_DELTA))
    s.add_argument("--epsilon", type=float, default=0.025)
    s = sub.add_parser("sweep-modes", parents=[common], help="convergence in the mode count")
    s.add_argument("--values", type=_ints, default=list(DEFAULT_MODES))
    s = sub.add_parser("check", parents=[common], help="property-check suite as a JSON report")
    s.add_argument("--states", type=int, default=200)
    sub.add_parser("basis", parents=[common], help="precompute and cache the velocity eigenbasis")
    return p


def _load(args) -> ex.SimulationConfig:
    cfg = ex.SimulationConfig.load(args.config) if args.config else ex.reference_config()
    if args.seed is not None:
        cfg = cfg.replace(**{"initial.seed": args.seed})
    return cfg


def _emit(data) -> None:
    json.dump(_plain(data), sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _study_code(report: dict) -> int:
    if report["failures"]:
        statuses = {f["status"] for f in report["failures"]}
        if "PREFLIGHT_FAILED" in statuses:
            return ex.EXIT_PREFLIGHT
        if "IO_ERROR" in statuses:
            return ex.EXIT_IO
        return ex.EXIT_INTEGRATOR
    return ex.EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return ex.EXIT_PREFLIGHT
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return ex.EXIT_IO
    out = args.out or cfg.output.dir or f"runs/{cfg.digest()}"
    try:
        if args.command == "run":
            rec = ex.run(cfg, out)
            _emit(ex._record_dict(rec))
            return rec.exit_code
        if args.command == "sweep-epsilon":
            rep = ex.sweep_epsilon(cfg, args.values, out, threads=args.threads)
        elif args.command == "sweep-delta":
            rep = ex.sweep_delta(cfg, args.values, out, threads=args.threads, epsilon=args.epsilon)
        elif args.command == "sweep-modes":
            rep = ex.sweep_modes(cfg, args.values, out, threads=args.threads)
        elif args.command == "check":
            report = ex.check(cfg, n_states=args.states, seed=args.seed or 0)
            _emit(report.to_dict())
            return ex.EXIT_OK if report.passed else ex.EXIT_PREFLIGHT
        else:
            _emit(ex.precompute_basis(cfg))
            return ex.EXIT_OK
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return ex.EXIT_PREFLIGHT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return ex.EXIT_IO
    _emit(rep)
    return _study_code(rep)


if __name__ == "__main__":
    sys.exit(main())
