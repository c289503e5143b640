"""Command-line entry point: ``exchtrace {synth,tfim,graph,bounds} ...``."""

from __future__ import annotations

import argparse
import sys

from . import bench
from .estimators import ESTIMATORS, DIAG_ESTIMATORS
from .sampling import DISTRIBUTIONS


def _names(text: str) -> list[str]:
    names = [t.strip() for t in text.split(",") if t.strip()]
    known = set(ESTIMATORS) | set(DIAG_ESTIMATORS)
    bad = [n for n in names if n not in known]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown estimator(s): {', '.join(bad)}")
    return names


def _csv(cast):
    def parse(text: str):
        try:
            return [cast(t) for t in text.split(",") if t.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    return parse


DEFAULT_ESTIMATORS = {
    "synth": "hutch,hutchpp,xtrace,xnystrace",
    "tfim": "hutch,hutchpp,xtrace,xnystrace",
    "graph": "bks,xdiag",
    "bounds": "hutchpp,xtrace,xnystrace",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # keep the diagnostic on one line
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="exchtrace", description="Randomized trace and diagonal estimation benchmarks.")
    sub = parser.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    for kind in ("synth", "tfim", "graph", "bounds"):
        p = sub.add_parser(kind)
        p.add_argument("--estimators", type=_names, default=None,
                       help="comma-separated estimator names")
        p.add_argument("--m", type=int, nargs="+", default=[12, 24, 48],
                       help="matvec budgets; rounded down to admissible values")
        p.add_argument("--trials", type=int, default=100)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--dist", choices=DISTRIBUTIONS, default="signs")
        p.add_argument("--normalize", action="store_true")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", required=True, help="output path")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        if kind in ("synth", "bounds"):
            p.add_argument("--dim", type=int, default=1000, help="matrix dimension")
            p.add_argument("--spectrum", type=_csv(str),
                           default=["flat", "poly", "exp", "step"] if kind == "synth" else ["poly", "exp", "step"])
        if kind == "tfim":
            p.add_argument("--n", type=int, default=10, help="number of spins")
            p.add_argument("--beta", type=_csv(float), default=[0.6])
            p.add_argument("--field", type=_csv(float), default=[10.0])
            p.add_argument("--eps", type=float, default=None,
                           help="run the adaptive energy sweep at this tolerance")
        if kind == "graph":
            p.add_argument("--input", required=True, help="MatrixMarket adjacency file")
            p.add_argument("--function", type=_csv(str), default=["exp", "triangles"])
    return parser


def config_from_args(args) -> bench.ExperimentConfig:
    kw = dict(
        kind=args.kind,
        estimators=args.estimators or _names(DEFAULT_ESTIMATORS[args.kind]),
        m_values=list(args.m),
        trials=args.trials,
        seed=args.seed,
        distribution=args.dist,
        normalize=args.normalize,
        workers=args.workers,
    )
    if args.kind in ("synth", "bounds"):
        kw.update(dim=args.dim, spectra=args.spectrum)
    if args.kind == "tfim":
        kw.update(n=args.n, betas=args.beta, fields=args.field, eps=args.eps)
    if args.kind == "graph":
        kw.update(input=args.input, functions=args.function)
    return bench.ExperimentConfig(**kw)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        rows = bench.run_experiment(cfg)
        bench.write_results(rows, cfg, args.out, args.format)
    except (ValueError, OSError) as exc:
        msg = " ".join(str(exc).split())
        print(f"exchtrace: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
