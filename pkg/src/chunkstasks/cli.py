"""``cht bench ...``: desk-scale benchmarks printing CSV rows to stdout."""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
import time

from .apps import fibonacci, matrix
from .errors import ChtError
from .runtime import Config, Runtime, default_executors

HEADER = ["cmd", "n", "block", "fill", "workers", "executors", "seed", "wall_s", "tasks", "steals", "bytes", "result_or_err"]
VERIFY_MAX_N = 1024

log = logging.getLogger("chunkstasks.bench")


def _nonneg_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _pos_int(text: str) -> int:
    value = _nonneg_int(text)
    if value == 0:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _fill(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"fill must be in [0, 1], got {value}")
    return value


def _int_list(text: str) -> list[int]:
    try:
        values = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return values


def _runtime(workers: int, executors: int, seed: int, types) -> Runtime:
    rt = Runtime(Config(n_workers=workers, executors=executors, seed=seed))
    rt.register(*types)
    return rt.start()


def run_fib(n: int, workers: int, executors: int, seed: int) -> dict:
    rt = _runtime(workers, executors, seed, fibonacci.TYPES)
    row = dict(cmd="fib", n=n, block="", fill="", workers=workers, executors=executors, seed=seed)
    try:
        cid_n = rt.register_chunk(fibonacci.CInt(n))
        t0 = time.perf_counter()
        out = rt.execute_mother_task(fibonacci.Fibonacci, cid_n)
        wall = time.perf_counter() - t0
        value = rt.get_chunk(out).x
        rt.delete_chunk(cid_n)
        rt.delete_chunk(out)
    except (ChtError, TimeoutError) as exc:
        rt._abort()
        row.update(wall_s="", tasks="", steals="", bytes="", result_or_err=f"error: {exc}")
        return row
    stats = rt.stop()
    row.update(
        wall_s=f"{wall:.6f}",
        tasks=stats.tasks,
        steals=stats.steals_succeeded,
        bytes=stats.bytes_moved,
        result_or_err=value,
    )
    return row


def run_matmul(n: int, block: int, fill: float, workers: int, executors: int, seed: int, verify: bool = False) -> dict:
    rt = _runtime(workers, executors, seed, matrix.TYPES)
    row = dict(cmd="matmul", n=n, block=block, fill=fill, workers=workers, executors=executors, seed=seed)
    try:
        a_blocks = matrix.random_block_sparse(n, block, fill, seed)
        b_blocks = matrix.random_block_sparse(n, block, fill, seed + 1)
        a = matrix.build_tree(rt, a_blocks, n, block)
        b = matrix.build_tree(rt, b_blocks, n, block)
        t0 = time.perf_counter()
        c = rt.execute_mother_task(matrix.MatMul, a, b)
        wall = time.perf_counter() - t0
        digest = hashlib.sha256(matrix.canonical_bytes(rt, c)).hexdigest()[:16]
        result = f"sha256:{digest}"
        if verify:
            got = matrix.to_dense(rt, c, n, block)
            want = matrix.dense_oracle(
                matrix.dense_from_blocks(a_blocks, n, block), matrix.dense_from_blocks(b_blocks, n, block)
            )
            result += f";relerr={matrix.relative_error(got, want):.3e}"
        for cid in (a, b, c):
            rt.delete_chunk(cid)
    except (ChtError, TimeoutError) as exc:
        rt._abort()
        row.update(wall_s="", tasks="", steals="", bytes="", result_or_err=f"error: {exc}")
        return row
    stats = rt.stop()
    row.update(
        wall_s=f"{wall:.6f}",
        tasks=stats.tasks,
        steals=stats.steals_succeeded,
        bytes=stats.bytes_moved,
        result_or_err=result,
    )
    return row


def _writer(columns: list[str]) -> csv.DictWriter:
    w = csv.DictWriter(sys.stdout, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    return w


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cht", description="Chunks and tasks runtime tools.")
    parser.add_argument("--log-level", default="WARNING", help="stderr log level (default WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)
    bench = sub.add_parser("bench", help="run a benchmark and print CSV")
    which = bench.add_subparsers(dest="bench", required=True)

    def common(p, workers=True):
        if workers:
            p.add_argument("--workers", type=_pos_int, default=4)
        p.add_argument("--executors", type=_pos_int, default=None, help="executor threads per worker")
        p.add_argument("--seed", type=_nonneg_int, default=0)

    fib = which.add_parser("fib", help="Fibonacci(n) through the task hierarchy")
    fib.add_argument("--n", type=_nonneg_int, required=True)
    common(fib)

    mm = which.add_parser("matmul", help="product of two random block-sparse matrices")
    mm.add_argument("--n", type=_pos_int, required=True)
    mm.add_argument("--block", type=_pos_int, required=True)
    mm.add_argument("--fill", type=_fill, default=1.0)
    mm.add_argument("--verify", action="store_true", help=f"compare with a dense product (n <= {VERIFY_MAX_N})")
    common(mm)

    sc = which.add_parser("scaling", help="one matmul problem at several worker and executor counts")
    sc.add_argument("--n", type=_pos_int, required=True)
    sc.add_argument("--block", type=_pos_int, required=True)
    sc.add_argument("--fill", type=_fill, default=1.0)
    sc.add_argument("--workers-list", type=_int_list, default=[1, 2, 4, 8])
    sc.add_argument("--executors-list", type=_int_list, default=[1])
    sc.add_argument("--repeat", type=_pos_int, default=1, help="runs per configuration; the best is kept")
    common(sc, workers=False)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    executors = args.executors or default_executors()

    if args.bench == "fib":
        row = run_fib(args.n, args.workers, executors, args.seed)
        _writer(HEADER).writerow(row)
        return 1 if str(row["result_or_err"]).startswith("error") else 0

    if args.n % args.block or (args.n // args.block) & (args.n // args.block - 1):
        parser.error(f"--n {args.n} / --block {args.block} must be a power of two")

    if args.bench == "matmul":
        if args.verify and args.n > VERIFY_MAX_N:
            parser.error(f"--verify is only allowed for --n <= {VERIFY_MAX_N}")
        row = run_matmul(args.n, args.block, args.fill, args.workers, executors, args.seed, args.verify)
        _writer(HEADER).writerow(row)
        return 1 if str(row["result_or_err"]).startswith("error") else 0

    # scaling
    executors_list = [args.executors] if args.executors else args.executors_list
    writer = _writer(HEADER + ["efficiency"])
    base = None
    status = 0
    for workers in args.workers_list:
        for ex in executors_list:
            best = None
            for _ in range(args.repeat):
                row = run_matmul(args.n, args.block, args.fill, workers, ex, args.seed)
                if row["wall_s"] == "":
                    best = row
                    break
                if best is None or float(row["wall_s"]) < float(best["wall_s"]):
                    best = row
            if best["wall_s"] == "":
                best["efficiency"] = ""
                status = 1
            else:
                t = float(best["wall_s"])
                threads = workers * ex
                if base is None:
                    base = (t, threads)
                best["efficiency"] = f"{base[0] * base[1] / (t * threads):.3f}"
            writer.writerow(best)
            sys.stdout.flush()
    return status


if __name__ == "__main__":
    sys.exit(main())
