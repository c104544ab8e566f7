"""Command-line benchmark driver.

Subcommands:
  bench   generate a matrix family, factorize with a chosen algorithm and
          execution engine, and write an accuracy/flop report
  dag     emit the tiled-algorithm dependency graph as DOT text
  gen     generate a family and dump it in the BLR1 binary format
  verify  load a BLR1 dump, validate it, and report size/rank/memory

Exit codes: 0 success, 1 numeric failure or violated threshold, 2 usage.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time

import numpy as np

from . import flops
from .core import blr_to_dense, max_rank, memory_footprint
from .generators import FAMILIES, GeneratorSpec, generate
from .lowrank import ToleranceConfig
from .metrics import compute_metrics
from .scheduler import (
    ALGORITHMS,
    build_tiled_dag,
    execute_forkjoin,
    execute_sequential,
    execute_taskgraph,
    resolve_threads,
)
from .serialize import dump_blr1, load_blr1

EXECUTORS = ("seq", "forkjoin", "taskgraph")


def _add_family_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", choices=FAMILIES, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, default=None, help="rows (default: n)")
    p.add_argument("--b", type=int, default=0, help="block size (default: 2*sqrt(n) snapped to a power of two)")
    p.add_argument("--rank", type=int, default=1, help="off-diagonal rank for the random family")
    p.add_argument("--eps", type=float, default=1e-10)
    p.add_argument("--eta", type=float, default=0.3, help="admissibility constant for exp3d")
    p.add_argument("--ell", type=float, default=0.1, help="correlation length for exp3d")
    p.add_argument("--seed", type=int, default=0)


def _spec_from_args(args: argparse.Namespace) -> GeneratorSpec:
    return GeneratorSpec(
        family=args.family,
        n=args.n,
        m=args.m,
        b=args.b,
        epsilon=args.eps,
        rank=args.rank,
        seed=args.seed,
        eta=args.eta,
        ell=args.ell,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blrqr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="factorize a generated family and report")
    _add_family_args(bench)
    bench.add_argument("--algo", choices=ALGORITHMS, default="blocked-hh")
    bench.add_argument("--exec", dest="executor", choices=EXECUTORS, default="seq")
    bench.add_argument("--threads", type=int, default=1)
    bench.add_argument("--out", help="write the JSON report here")
    bench.add_argument("--csv", help="append a CSV row here")
    bench.add_argument("--dump-r", help="write the BLR1 dump of the R factor here")
    bench.add_argument("--no-metrics", action="store_true", help="skip dense accuracy metrics")
    bench.add_argument("--kappa", action="store_true", help="include the Frobenius condition estimate")
    bench.add_argument("--max-res", type=float, help="fail (exit 1) if Res exceeds this")
    bench.add_argument("--max-orth", type=float, help="fail (exit 1) if Orth exceeds this")

    dag = sub.add_parser("dag", help="emit the tiled task DAG")
    dag.add_argument("--p", type=int, required=True)
    dag.add_argument("--q", type=int, required=True)
    dag.add_argument("--emit", choices=("dot",), default="dot")
    dag.add_argument("--out", help="write here instead of stdout")

    gen = sub.add_parser("gen", help="generate a family and dump BLR1")
    _add_family_args(gen)
    gen.add_argument("--out", required=True, help="BLR1 output path")
    gen.add_argument("--dense-out", help="also save the dense original (.npy)")

    verify = sub.add_parser("verify", help="load and check a BLR1 dump")
    verify.add_argument("--in", dest="path", required=True)
    verify.add_argument("--dense", help="dense original (.npy) to measure the compression error against")
    verify.add_argument("--eps", type=float, help="fail (exit 1) if the compression error exceeds this")

    return parser


def _run_bench(args: argparse.Namespace) -> int:
    spec = _spec_from_args(args)
    if args.executor == "taskgraph" and args.algo != "tiled-hh":
        print("taskgraph execution is only available for tiled-hh", file=sys.stderr)
        return 2
    threads = resolve_threads(args.threads)
    cfg = ToleranceConfig(spec.epsilon)
    wall: dict[str, float] = {}

    t0 = time.perf_counter()
    a, dense = generate(spec)
    wall["generate"] = (time.perf_counter() - t0) * 1e3

    flops.reset()
    t0 = time.perf_counter()
    if args.executor == "seq":
        result = execute_sequential(args.algo, a, cfg)
    elif args.executor == "forkjoin":
        result = execute_forkjoin(args.algo, a, cfg, threads)
    else:
        dag = build_tiled_dag(a.p, a.q)
        result = execute_taskgraph(dag, a, cfg, threads)
    wall["factorize"] = (time.perf_counter() - t0) * 1e3
    flop_map = flops.report()

    if args.dump_r:
        with open(args.dump_r, "wb") as fh:
            dump_blr1(result.r, fh)

    if args.no_metrics:
        from .metrics import AccuracyReport

        report = AccuracyReport(
            algorithm=result.algorithm,
            m=spec.m,
            n=spec.n,
            b=spec.b,
            epsilon=spec.epsilon,
            res=float("nan"),
            orth=float("nan"),
            max_rank=max_rank(result.r),
            memory_bytes=memory_footprint(result.r),
            flops=flop_map,
            flops_total=sum(flop_map.values()),
            wall_ms=wall,
        )
    else:
        t0 = time.perf_counter()
        report = compute_metrics(
            dense, result, spec.epsilon, flops=flop_map, wall_ms=wall,
            with_kappa=args.kappa,
        )
        report.wall_ms["metrics"] = (time.perf_counter() - t0) * 1e3

    text = report.to_json()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)

    if args.csv:
        _append_csv(args.csv, args, report, threads)

    if not args.no_metrics:
        if args.max_res is not None and report.res > args.max_res:
            print(f"Res {report.res:.3e} exceeds {args.max_res:.3e}", file=sys.stderr)
            return 1
        if args.max_orth is not None and report.orth > args.max_orth:
            print(f"Orth {report.orth:.3e} exceeds {args.max_orth:.3e}", file=sys.stderr)
            return 1
    return 0


def _append_csv(path: str, args: argparse.Namespace, report, threads: int) -> None:
    fields = [
        "family", "algo", "exec", "threads", "m", "n", "b", "eps", "seed",
        "res", "orth", "max_rank", "memory_bytes", "flops_total",
        "wall_factorize_ms",
    ]
    row = {
        "family": args.family,
        "algo": args.algo,
        "exec": args.executor,
        "threads": threads,
        "m": report.m,
        "n": report.n,
        "b": report.b,
        "eps": report.epsilon,
        "seed": args.seed,
        "res": report.res,
        "orth": report.orth,
        "max_rank": report.max_rank,
        "memory_bytes": report.memory_bytes,
        "flops_total": report.flops_total,
        "wall_factorize_ms": report.wall_ms.get("factorize", 0.0),
    }
    fresh = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        if fresh:
            writer.writeheader()
        writer.writerow(row)


def _run_dag(args: argparse.Namespace) -> int:
    dag = build_tiled_dag(args.p, args.q)
    text = dag.to_dot()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def _run_gen(args: argparse.Namespace) -> int:
    spec = _spec_from_args(args)
    a, dense = generate(spec)
    with open(args.out, "wb") as fh:
        dump_blr1(a, fh)
    if args.dense_out:
        np.save(args.dense_out, dense)
    return 0


def _run_verify(args: argparse.Namespace) -> int:
    with open(args.path, "rb") as fh:
        a = load_blr1(fh)
    a.validate()
    info = {
        "m": a.structure.m,
        "n": a.structure.n,
        "b": a.structure.b,
        "max_rank": max_rank(a),
        "memory_bytes": memory_footprint(a),
    }
    if args.dense:
        dense = np.load(args.dense)
        err = float(
            np.linalg.norm(blr_to_dense(a) - dense) / np.linalg.norm(dense)
        )
        info["compression_error"] = err
    import json

    print(json.dumps(info, indent=2, sort_keys=True))
    if args.dense and args.eps is not None and info["compression_error"] > args.eps:
        print(
            f"compression error {info['compression_error']:.3e} exceeds {args.eps:.3e}",
            file=sys.stderr,
        )
        return 1
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "bench":
            return _run_bench(args)
        if args.command == "dag":
            return _run_dag(args)
        if args.command == "gen":
            return _run_gen(args)
        return _run_verify(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
