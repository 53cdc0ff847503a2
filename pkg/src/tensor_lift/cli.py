"""Command-line surface: synthetic data, masking, completion and coupled runs,
and strategy benchmarking with CSV output.

Exit codes: 0 success, 2 bad arguments, 3 I/O failure, 4 solver failure.
All randomness derives from --seed; repeating a run with the same seed and
--no-timing yields byte-identical CSV output.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .completion import STRATEGIES, AlsPlan, MaskedTensor, run_completion
from .core import DenseTensor, ObservationMask
from .coupled import CoupledInstance, coupled_solve
from .lifted import RichardsonConfig
from .operators import BetaEstimationError, SketchConfig
from .synth import random_coupled, random_cp, random_tt, random_tucker
from .tensorio import (
    FormatError,
    read_mask,
    read_tensor,
    write_mask,
    write_model,
    write_tensor,
)

EXIT_BAD_ARGS = 2
EXIT_IO = 3
EXIT_SOLVER = 4

COMPLETE_HEADER = ["round", "block", "strategy", "epsilon", "epsilon_hat", "p",
                   "R", "train_rre", "test_rre", "wall_ms", "inner_iters", "beta"]
COUPLED_HEADER = ["round", "block", "strategy", "epsilon", "epsilon_hat", "p",
                  "d", "mse_train", "mse_full", "wall_ms", "inner_iters", "beta"]
BENCH_HEADER = ["strategy", "epsilon", "epsilon_hat", "p", "R", "rounds",
                "total_wall_ms", "final_train_rre", "final_test_rre",
                "total_inner_iters"]


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _beta_policy(text: str):
    if text in ("exact", "heuristic", "auto"):
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"--beta expects exact, heuristic, auto, or a number, got {text!r}")


def _epsilon_hat(text: str):
    if text == "auto":
        return None
    return float(text)


def _fmt(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, float) and value != value:
        return "nan"
    return str(value)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in header])


def _rank_label(model: str, ranks: tuple[int, ...]) -> int:
    if model == "cp":
        return ranks[0]
    if model == "tucker":
        return int(np.prod(ranks))
    return max(ranks)


@dataclass
class RunSpec:
    """One completion run as described by the CLI arguments."""

    tensor_path: Path
    mask_path: Path
    model: str
    ranks: tuple[int, ...]
    strategy: str
    epsilon: float
    epsilon_hat: float | None
    delta: float
    oversample_c: float
    beta: float | str
    rounds: int
    seed: int
    out_dir: Path
    sample_count: int | None = None
    warm_start: bool = False
    timing: bool = True

    def __post_init__(self):
        for p in (self.tensor_path, self.mask_path):
            if not Path(p).exists():
                raise FileNotFoundError(p)

    def plan(self) -> AlsPlan:
        rich = RichardsonConfig(epsilon=self.epsilon, epsilon_hat=self.epsilon_hat,
                                beta=self.beta, accelerate=False)
        sketch = SketchConfig(
            epsilon_hat=self.epsilon_hat if self.epsilon_hat else 0.0,
            delta=self.delta, sample_count=self.sample_count,
            oversample_c=self.oversample_c, seed=self.seed)
        return AlsPlan(model=self.model, ranks=self.ranks, strategy=self.strategy,
                       rounds=self.rounds, richardson=rich, sketch=sketch,
                       seed=self.seed, warm_start=self.warm_start)


def _add_solver_flags(p: argparse.ArgumentParser):
    p.add_argument("--strategy", choices=STRATEGIES, default="direct")
    p.add_argument("--epsilon", type=float, default=1e-6,
                   help="reducible-error budget of the lifted iterations")
    p.add_argument("--epsilon-hat", type=_epsilon_hat, default=0.0,
                   help="inner-solve accuracy; 'auto' resolves to 0.25/beta^2")
    p.add_argument("--delta", type=float, default=0.1,
                   help="sketch failure budget")
    p.add_argument("--oversample-c", type=float, default=10.0,
                   help="sample-count constant")
    p.add_argument("--beta", type=_beta_policy, default="auto",
                   help="exact, heuristic, auto, or a numeric value")
    p.add_argument("--sample-count", type=int, default=None,
                   help="override the sketch row count")
    p.add_argument("--sample-frac", type=float, default=None,
                   help="sketch row count as a fraction of design rows")
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-timing", action="store_true",
                   help="write wall_ms as 0 so output is byte-reproducible")
    p.add_argument("--plot", action="store_true",
                   help="also render figures next to the CSV")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tensor-lift",
        description="Tensor completion via lifted structured least squares")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--kind", required=True,
                   choices=["random-cp", "random-tucker", "random-tt", "coupled"])
    g.add_argument("--shape", type=_ints, help="comma-separated dimensions")
    g.add_argument("--rank", type=_ints, help="comma-separated ranks")
    g.add_argument("--n", type=int, default=200, help="coupled: matrix height")
    g.add_argument("--d", type=int, default=5, help="coupled: unknown size")
    g.add_argument("--p", type=float, default=0.5, help="coupled: mask rate")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output directory")

    m = sub.add_parser("mask", help="sample an observation mask for a tensor")
    m.add_argument("--input", required=True, help="DTF1 tensor path")
    m.add_argument("--p", type=float, required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True, help="MSK1 output path")

    c = sub.add_parser("complete", help="run masked completion")
    c.add_argument("--input", required=True, help="DTF1 tensor path")
    c.add_argument("--mask", required=True, help="MSK1 mask path")
    c.add_argument("--model", choices=["cp", "tucker", "tt"], required=True)
    c.add_argument("--rank", type=_ints, required=True)
    c.add_argument("--warm-start", action="store_true")
    _add_solver_flags(c)
    c.add_argument("--out", required=True, help="output directory")

    k = sub.add_parser("coupled", help="run the coupled matrix problem")
    k.add_argument("--input", required=True,
                   help="directory with a.dtf b.dtf c.dtf d.dtf e.dtf")
    k.add_argument("--mask", required=True, help="MSK1 mask path for e")
    _add_solver_flags(k)
    k.add_argument("--out", required=True, help="output directory")

    b = sub.add_parser("bench", help="sweep strategies and mask rates")
    b.add_argument("--input", required=True, help="DTF1 tensor path")
    b.add_argument("--model", choices=["cp", "tucker", "tt"], required=True)
    b.add_argument("--rank", type=_ints, required=True)
    b.add_argument("--strategies", default="direct,parafac,mini-als",
                   help="comma-separated strategy list")
    b.add_argument("--p-grid", type=_floats, default=(0.05, 0.1, 0.2, 0.4))
    _add_solver_flags(b)
    b.add_argument("--out", required=True, help="output directory")
    return parser


def _resolve_sample_count(args, n_rows_hint=None):
    if args.sample_count is not None:
        return args.sample_count
    if args.sample_frac is not None:
        if n_rows_hint is None:
            raise ValueError("--sample-frac needs a known design height")
        return max(1, int(round(args.sample_frac * n_rows_hint)))
    return None


def _cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "coupled":
        inst, x_true, y_true = random_coupled(args.n, args.d, args.p, seed=args.seed)
        for name, mat in (("a", inst.a), ("b", inst.b), ("c", inst.c),
                          ("d", inst.d)):
            write_tensor(out / f"{name}.dtf", DenseTensor(mat))
        write_tensor(out / "e.dtf", inst.e)
        write_tensor(out / "x_true.dtf", DenseTensor(x_true))
        write_tensor(out / "y_true.dtf", DenseTensor(y_true))
        write_mask(out / "mask.msk", inst.mask)
        print(f"wrote coupled instance (n={args.n}, d={args.d}) to {out}")
        return 0
    if not args.shape or not args.rank:
        raise ValueError("generate needs --shape and --rank")
    if args.kind == "random-cp":
        tensor, model = random_cp(args.shape, args.rank[0], seed=args.seed)
    elif args.kind == "random-tucker":
        tensor, model = random_tucker(args.shape, args.rank, seed=args.seed)
    else:
        tensor, model = random_tt(args.shape, args.rank, seed=args.seed)
    write_tensor(out / "tensor.dtf", tensor)
    write_model(out / "model.mdl", model)
    print(f"wrote {args.kind} tensor {tensor.shape} to {out}")
    return 0


def _cmd_mask(args) -> int:
    tensor = read_tensor(args.input)
    mask = ObservationMask.random(tensor.shape, args.p, seed=args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_mask(args.out, mask)
    print(f"wrote mask with {len(mask)} of {mask.total} entries to {args.out}")
    return 0


def _completion_rows(trace, spec: RunSpec, p: float):
    rows = []
    for rec in trace.records:
        rows.append({
            "round": rec.round,
            "block": rec.block,
            "strategy": spec.strategy,
            "epsilon": spec.epsilon,
            "epsilon_hat": "auto" if spec.epsilon_hat is None else spec.epsilon_hat,
            "p": p,
            "R": _rank_label(spec.model, spec.ranks),
            "train_rre": rec.train_rre,
            "test_rre": rec.test_rre,
            "wall_ms": rec.wall_ms if spec.timing else 0.0,
            "inner_iters": rec.inner_iters,
            "beta": rec.beta,
        })
    return rows


def _cmd_complete(args) -> int:
    spec = RunSpec(
        tensor_path=Path(args.input), mask_path=Path(args.mask),
        model=args.model, ranks=args.rank, strategy=args.strategy,
        epsilon=args.epsilon, epsilon_hat=args.epsilon_hat, delta=args.delta,
        oversample_c=args.oversample_c, beta=args.beta, rounds=args.rounds,
        seed=args.seed, out_dir=Path(args.out),
        warm_start=args.warm_start, timing=not args.no_timing)
    tensor = read_tensor(spec.tensor_path)
    mask = read_mask(spec.mask_path)
    if mask.shape != tensor.shape:
        raise ValueError(f"mask shape {mask.shape} != tensor shape {tensor.shape}")
    spec.sample_count = _resolve_sample_count(
        args, n_rows_hint=int(np.prod(tensor.shape)) // max(tensor.shape))
    data = MaskedTensor(tensor, mask)
    model, trace = run_completion(data, spec.plan(), ground_truth=tensor)
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    rows = _completion_rows(trace, spec, p=mask.rate)
    csv_path = spec.out_dir / "complete_trace.csv"
    _write_csv(csv_path, COMPLETE_HEADER, rows)
    write_model(spec.out_dir / "model.mdl", model)
    if args.plot:
        from .report import completion_figure
        completion_figure(rows, spec.out_dir / "complete_rre.png")
    print(f"wrote {csv_path}")
    return 0


def _cmd_coupled(args) -> int:
    src = Path(args.input)
    mats = {}
    for name in ("a", "b", "c", "d", "e"):
        path = src / f"{name}.dtf"
        if not path.exists():
            raise FileNotFoundError(path)
        mats[name] = read_tensor(path)
    mask = read_mask(args.mask)
    inst = CoupledInstance(mats["a"].data, mats["b"].data, mats["c"].data,
                           mats["d"].data, mats["e"], mask)
    sample_count = _resolve_sample_count(args, n_rows_hint=inst.n * inst.n)
    rich = RichardsonConfig(epsilon=args.epsilon, epsilon_hat=args.epsilon_hat,
                            beta=args.beta)
    sketch = SketchConfig(epsilon_hat=args.epsilon_hat if args.epsilon_hat else 0.0,
                          delta=args.delta, sample_count=sample_count,
                          oversample_c=args.oversample_c, seed=args.seed)
    _, _, records = coupled_solve(inst, args.rounds, args.strategy, rich, sketch,
                                  seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for rec in records:
        rows.append({
            "round": rec.round, "block": rec.block, "strategy": args.strategy,
            "epsilon": args.epsilon,
            "epsilon_hat": "auto" if args.epsilon_hat is None else args.epsilon_hat,
            "p": mask.rate, "d": inst.dim,
            "mse_train": rec.mse_train, "mse_full": rec.mse_full,
            "wall_ms": 0.0 if args.no_timing else rec.wall_ms,
            "inner_iters": rec.inner_iters, "beta": rec.beta,
        })
    csv_path = out / "coupled_trace.csv"
    _write_csv(csv_path, COUPLED_HEADER, rows)
    if args.plot:
        from .report import coupled_figure
        coupled_figure(rows, out / "coupled_mse.png")
    print(f"wrote {csv_path}")
    return 0


def _worker_count() -> int:
    env = os.environ.get("TENSOR_LIFT_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def _bench_one(tensor, args, strategy, p, run_index):
    seed = args.seed ^ run_index
    mask = ObservationMask.random(tensor.shape, p, seed=seed)
    rich = RichardsonConfig(epsilon=args.epsilon, epsilon_hat=args.epsilon_hat,
                            beta=args.beta)
    sample_count = _resolve_sample_count(
        args, n_rows_hint=int(np.prod(tensor.shape)) // max(tensor.shape))
    sketch = SketchConfig(epsilon_hat=args.epsilon_hat if args.epsilon_hat else 0.0,
                          delta=args.delta, sample_count=sample_count,
                          oversample_c=args.oversample_c, seed=seed)
    plan = AlsPlan(model=args.model, ranks=args.rank, strategy=strategy,
                   rounds=args.rounds, richardson=rich, sketch=sketch, seed=seed)
    _, trace = run_completion(MaskedTensor(tensor, mask), plan, ground_truth=tensor)
    last = trace.records[-1]
    return {
        "strategy": strategy, "epsilon": args.epsilon,
        "epsilon_hat": "auto" if args.epsilon_hat is None else args.epsilon_hat,
        "p": p, "R": _rank_label(args.model, args.rank), "rounds": args.rounds,
        "total_wall_ms": 0.0 if args.no_timing
        else sum(r.wall_ms for r in trace.records),
        "final_train_rre": last.train_rre,
        "final_test_rre": last.test_rre,
        "total_inner_iters": sum(r.inner_iters for r in trace.records),
    }


def _cmd_bench(args) -> int:
    tensor = read_tensor(args.input)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    for s in strategies:
        if s not in STRATEGIES:
            raise ValueError(f"unknown strategy {s!r}")
    grid = [(s, p) for s in strategies for p in args.p_grid]
    workers = _worker_count()
    results = [None] * len(grid)
    if workers == 1:
        for i, (s, p) in enumerate(grid):
            results[i] = _bench_one(tensor, args, s, p, i)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_bench_one, tensor, args, s, p, i): i
                       for i, (s, p) in enumerate(grid)}
            for fut in concurrent.futures.as_completed(futures):
                results[futures[fut]] = fut.result()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "bench.csv"
    _write_csv(csv_path, BENCH_HEADER, results)
    if args.plot:
        from .report import bench_figure
        bench_figure(results, out / "bench.png")
    print(f"wrote {csv_path}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "generate": _cmd_generate,
        "mask": _cmd_mask,
        "complete": _cmd_complete,
        "coupled": _cmd_coupled,
        "bench": _cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except (FileNotFoundError, OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (BetaEstimationError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_ARGS


if __name__ == "__main__":
    sys.exit(main())
