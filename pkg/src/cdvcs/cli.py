"""Command line entry point: ``cdvcs scenario|bench|fuzz``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .bench import bench_commit, fuzz_converge
from .errors import CdvcsError
from .scenarios import SCENARIOS


def _scenario(args) -> int:
    kwargs = {"seed": args.seed}
    if args.name == "booking":
        kwargs.update(capacity=args.capacity, requests=args.requests)
    elif args.name == "single-writer":
        kwargs.update(n_commits=args.commits, observers=args.observers)
    report = SCENARIOS[args.name](**kwargs)
    print(report.render())
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n")
    return 0 if report.passed else 1


def _bench(args) -> int:
    summary = bench_commit(args.n, args.out, store_dir=args.store_dir, memory=args.memory)
    print(summary.render())
    print(f"csv: {args.out}")
    return 0


def _fuzz(args) -> int:
    failed = []

    def progress(r):
        if r.passed:
            if args.verbose:
                print(f"seed {r.seed}: ok ({r.ticks} ticks, {r.ops})")
        else:
            failed.append(r)
            where = f", trace {r.trace_path}" if r.trace_path else ""
            print(f"seed {r.seed}: FAIL {r.reason}{where}")

    seeds = list(range(args.first_seed, args.first_seed + args.seeds))
    results = fuzz_converge(args.replicas, args.ops, seeds, args.partition_prob, args.drop_prob,
                            trace_dir=args.trace_dir, progress=progress, spacing=args.spacing)
    print(f"{len(results) - len(failed)}/{len(results)} seeds converged")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cdvcs", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sc = sub.add_parser("scenario", parents=[common], help="run a scripted multi-peer scenario")
    sc.add_argument("name", choices=sorted(SCENARIOS))
    sc.add_argument("--report", help="write the JSON report here")
    sc.add_argument("--seed", type=int, default=0)
    sc.add_argument("--capacity", type=int, default=1, help="booking: rooms available")
    sc.add_argument("--requests", type=int, default=2, help="booking: concurrent clients")
    sc.add_argument("--commits", type=int, default=100, help="single-writer: commits to make")
    sc.add_argument("--observers", type=int, default=3, help="single-writer: observer peers")
    sc.set_defaults(func=_scenario)

    be = sub.add_parser("bench", help="benchmarks")
    bsub = be.add_subparsers(dest="bench", required=True)
    bc = bsub.add_parser("commit", parents=[common], help="per-commit latency as the history grows")
    bc.add_argument("--n", type=int, default=100_000)
    bc.add_argument("--out", required=True, help="CSV output path")
    bc.add_argument("--store-dir", help="keep the file store here instead of a temp dir")
    bc.add_argument("--memory", action="store_true", help="use the in-memory store")
    bc.set_defaults(func=_bench)

    fz = sub.add_parser("fuzz", parents=[common], help="randomized convergence runs")
    fz.add_argument("--replicas", type=int, default=5)
    fz.add_argument("--ops", type=int, default=1000)
    fz.add_argument("--seeds", type=int, default=100)
    fz.add_argument("--first-seed", type=int, default=0)
    fz.add_argument("--partition-prob", type=float, default=0.2)
    fz.add_argument("--drop-prob", type=float, default=0.0)
    fz.add_argument("--spacing", type=int, default=8, help="ticks between random ops")
    fz.add_argument("--trace-dir", default="fuzz-traces", help="where failing traces go")
    fz.set_defaults(func=_fuzz)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CdvcsError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
