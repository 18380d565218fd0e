"""Command line entry point: ``wtransport <experiment> [flags]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import AssumptionViolation, TransportError
from .experiments import EXPERIMENTS, ExperimentConfig, default_config, run_experiment

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_ASSUMPTION = 3

log = logging.getLogger("wasserstein_transport")

HELP = {
    "geodesic": "build a Monge geodesic and inspect its trajectories",
    "linear": "refinement study of linear tangent-space transport",
    "cone": "refinement study of tangent-cone transport",
    "dcheck": "sweep the sampled discrepancy D over grid pairs",
    "plandist": "plan distance against endpoint distance as segments shrink",
    "oracle": "run the independent oracles on their own",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wtransport", description="Parallel transport experiments in Wasserstein space.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=HELP[name])
        sp.add_argument("--config", metavar="PATH", help="JSON experiment config (defaults used if omitted)")
        sp.add_argument("--out", metavar="DIR", default=".", help="output directory (default: current)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--tol", type=float, help="override the config tolerance")
        sp.add_argument("--budget", type=int, help="override the refinement budget")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else default_config(args.command)
    overrides = {k: getattr(args, k) for k in ("seed", "tol", "budget") if getattr(args, k) is not None}
    return cfg.replace(**overrides) if overrides else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"wtransport: bad config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        summary = run_experiment(args.command, cfg, args.out)
    except AssumptionViolation as exc:
        print(f"wtransport: assumption violated: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except TransportError as exc:
        print(f"wtransport: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    log.info("wrote %s", summary.get("csv"))
    print(f"{args.command}: status={summary['status']} csv={summary['csv']}")
    for cid, c in summary.get("criteria", {}).items():
        mark = {True: "PASS", False: "FAIL", None: "n/a"}[c["passed"]]
        print(f"  {cid}: {mark} value={c['value']} threshold={c['threshold']}")
    if summary["status"] == "assumption_violation":
        return EXIT_ASSUMPTION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
