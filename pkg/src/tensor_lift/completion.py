"""Outer ALS drivers for CP, Tucker, and TT completion.

Each block update poses the masked regression for one factor (or core) as a
lifted problem over the corresponding structured operator and solves it with
the selected inner strategy:

* ``direct``    masked normal equations, no lifting
* ``parafac``   one fill-in-and-refit step from the current iterate
* ``mini-als``  lifted Richardson iterations with exact inner solves
* ``accel``     mini-ALS with adaptive-step extrapolation
* ``approx``    mini-ALS with leverage-sampled inner solves
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    CPModel,
    DenseTensor,
    ObservationMask,
    TTModel,
    TuckerModel,
    devectorize,
    mode_product,
    rre,
    unfold,
    vectorize,
)
from .lifted import (
    LiftedProblem,
    RichardsonConfig,
    accelerated_mini_als,
    approx_mini_als,
    em_one_step,
    resolve_beta,
)
from .operators import (
    KhatriRaoOperator,
    KroneckerOperator,
    KroneckerTimesMatrixOperator,
    SketchConfig,
    TTChainOperator,
)

__all__ = [
    "STRATEGIES",
    "MaskedTensor",
    "AlsPlan",
    "BlockStats",
    "FitRecord",
    "FitTrace",
    "cp_factor_update",
    "tucker_core_update",
    "tucker_factor_update",
    "tt_core_update",
    "tt_canonicalize",
    "tt_left_chain",
    "tt_right_chain",
    "run_completion",
]

STRATEGIES = ("direct", "parafac", "mini-als", "accel", "approx")


class MaskedTensor:
    """A tensor paired with its observation mask.

    Fitting code reads values only at observed positions; the per-mode
    groupings of the mask are cached since the mask is static across ALS
    rounds.
    """

    def __init__(self, tensor: DenseTensor, mask: ObservationMask):
        if tensor.shape != mask.shape:
            raise ValueError(f"tensor shape {tensor.shape} != mask shape {mask.shape}")
        if len(mask) == 0:
            raise ValueError("mask is empty")
        self.tensor = tensor
        self.mask = mask
        self.values = mask.values_from(tensor)
        self._groups: dict[int, list] = {}

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.shape

    def groups(self, mode: int):
        if mode not in self._groups:
            self._groups[mode] = self.mask.mode_groups(mode)
        return self._groups[mode]


@dataclass(frozen=True)
class AlsPlan:
    """Configuration of one completion run."""

    model: str
    ranks: tuple[int, ...]
    strategy: str = "direct"
    rounds: int = 1
    richardson: RichardsonConfig = field(default_factory=RichardsonConfig)
    sketch: SketchConfig = field(default_factory=SketchConfig)
    init: str = "uniform"
    seed: int = 0
    warm_start: bool = False
    canonicalize_tt: bool = True

    def __post_init__(self):
        if self.model not in ("cp", "tucker", "tt"):
            raise ValueError(f"unknown model kind {self.model!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not self.ranks or any(r < 1 for r in self.ranks):
            raise ValueError(f"ranks must be positive, got {self.ranks}")
        if self.init not in ("uniform", "hosvd"):
            raise ValueError(f"unknown init policy {self.init!r}")


@dataclass
class BlockStats:
    """Bookkeeping for one block update."""

    inner_iters: int = 0
    beta: float = float("nan")
    skipped_rows: tuple[int, ...] = ()
    wall_ms: float = 0.0


@dataclass
class FitRecord:
    round: int
    block: str
    train_rre: float
    test_rre: float | None
    wall_ms: float
    inner_iters: int
    beta: float


class FitTrace:
    """Per-(round, block) fit records in execution order."""

    def __init__(self):
        self.records: list[FitRecord] = []

    def append(self, record: FitRecord):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def _block_seed(base_seed: int, key: tuple[int, ...]) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=base_seed, spawn_key=key)


def _needs_beta(strategy: str) -> bool:
    return strategy in ("mini-als", "accel", "approx")


def _resolve_block_policy(plan: AlsPlan, problems) -> tuple[float, float]:
    """One beta (and resolved epsilon_hat) shared by all row problems of a block.

    The block beta is the max over per-row values, which keeps every row's
    spectral inequality valid.
    """
    live = [p for p in problems if p is not None]
    beta = max(resolve_beta(p, plan.richardson.beta) for p in live)
    eps_hat = plan.richardson.epsilon_hat
    if eps_hat is None:
        eps_hat = 0.25 / beta ** 2
    return beta, eps_hat


def solve_with_strategy(prob: LiftedProblem, strategy: str,
                        richardson: RichardsonConfig, sketch: SketchConfig,
                        x_current, beta: float, eps_hat: float, seed_seq,
                        warm_start: bool = False) -> tuple[np.ndarray, int]:
    """Dispatch one masked solve to the named inner strategy."""
    if strategy == "direct":
        return prob.direct_solve(), 1
    if strategy == "parafac":
        return em_one_step(prob, x_current, SketchConfig()), 1
    cfg = replace(richardson, beta=beta, epsilon_hat=eps_hat)
    x0 = x_current if warm_start else None
    rng = np.random.default_rng(seed_seq)
    if strategy == "mini-als":
        cfg = replace(cfg, epsilon_hat=0.0)
        report = approx_mini_als(prob, cfg, sketch, x0=x0, rng=rng)
    elif strategy == "accel":
        report = accelerated_mini_als(prob, cfg, sketch, x0=x0, rng=rng)
    elif strategy == "approx":
        report = approx_mini_als(prob, cfg, sketch, x0=x0, rng=rng)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return report.x, report.iterations


def _row_block_update(op, data: MaskedTensor, mode: int, current: np.ndarray,
                      plan: AlsPlan, base_seed: int) -> tuple[np.ndarray, BlockStats]:
    """Solve the independent masked row systems of one block update."""
    start = time.perf_counter()
    groups = data.groups(mode)
    problems = []
    for cols, pos in groups:
        if len(cols) == 0:
            problems.append(None)
        else:
            problems.append(LiftedProblem(op, cols, data.values[pos]))
    if all(p is None for p in problems):
        raise ValueError(f"mode {mode} has no observed entries in any slice")

    if _needs_beta(plan.strategy):
        beta, eps_hat = _resolve_block_policy(plan, problems)
    else:
        beta, eps_hat = float("nan"), 0.0

    new = current.copy()
    skipped = []
    iters = 0
    for i, prob in enumerate(problems):
        if prob is None:
            skipped.append(i)
            continue
        seed_seq = _block_seed(base_seed, (i,))
        new[i], used = solve_with_strategy(prob, plan.strategy, plan.richardson,
                                           plan.sketch, current[i], beta, eps_hat,
                                           seed_seq, plan.warm_start)
        iters += used
    if skipped:
        warnings.warn(f"{len(skipped)} slice(s) of mode {mode} have no "
                      "observations; their rows were left unchanged",
                      stacklevel=3)
    stats = BlockStats(inner_iters=iters, beta=beta, skipped_rows=tuple(skipped),
                       wall_ms=(time.perf_counter() - start) * 1e3)
    return new, stats


def cp_factor_update(data: MaskedTensor, model: CPModel, n: int, plan: AlsPlan,
                     base_seed: int = 0) -> tuple[CPModel, BlockStats]:
    """Update CP factor ``n`` against the Khatri-Rao design of the others.

    The weight vector is absorbed into the unknown rows, re-extracted as
    column norms afterwards, and the factor columns renormalized.
    """
    if not 0 <= n < len(model.factors):
        raise ValueError(f"factor index {n} out of range")
    op = KhatriRaoOperator([f for j, f in enumerate(model.factors) if j != n])
    current = model.factors[n] * model.weights
    solved, stats = _row_block_update(op, data, n, current, plan, base_seed)
    factors = list(model.factors)
    factors[n] = solved
    updated = CPModel(np.ones(model.rank), factors).normalized()
    # Rows that were skipped keep their old direction; weights follow the norms.
    return updated, stats


def tucker_core_update(data: MaskedTensor, model: TuckerModel, plan: AlsPlan,
                       base_seed: int = 0) -> tuple[TuckerModel, BlockStats]:
    """Update the Tucker core through one masked Kronecker regression."""
    start = time.perf_counter()
    op = KroneckerOperator(model.factors)
    if len(data.mask) < op.n_cols:
        warnings.warn(f"only {len(data.mask)} observations for {op.n_cols} "
                      "core unknowns; expect a rank-deficient solve "
                      "(raise p or add ridge regularization)", stacklevel=2)
    prob = LiftedProblem(op, data.mask.linear, data.values)
    if _needs_beta(plan.strategy):
        beta = resolve_beta(prob, plan.richardson.beta)
        eps_hat = plan.richardson.epsilon_hat
        if eps_hat is None:
            eps_hat = 0.25 / beta ** 2
    else:
        beta, eps_hat = float("nan"), 0.0
    x0 = vectorize(model.core)
    x, iters = solve_with_strategy(prob, plan.strategy, plan.richardson,
                                   plan.sketch, x0, beta, eps_hat,
                                   _block_seed(base_seed, (0,)), plan.warm_start)
    core = devectorize(x, model.ranks)
    stats = BlockStats(inner_iters=iters, beta=beta,
                       wall_ms=(time.perf_counter() - start) * 1e3)
    return TuckerModel(core, model.factors), stats


def tucker_factor_update(data: MaskedTensor, model: TuckerModel, n: int,
                         plan: AlsPlan, base_seed: int = 0
                         ) -> tuple[TuckerModel, BlockStats]:
    """Update Tucker factor ``n``; the design is (Kronecker of the rest) times
    the transposed mode-``n`` core unfolding."""
    if not 0 <= n < len(model.factors):
        raise ValueError(f"factor index {n} out of range")
    others = [f for j, f in enumerate(model.factors) if j != n]
    right = unfold(model.core, n).T
    op = KroneckerTimesMatrixOperator(others, right)
    solved, stats = _row_block_update(op, data, n, model.factors[n], plan, base_seed)
    factors = list(model.factors)
    factors[n] = solved
    return TuckerModel(model.core, factors), stats


def tt_left_chain(cores, n: int) -> np.ndarray:
    """Contract cores before ``n`` into a (prod I_<n, R_{n-1}) matrix."""
    out = np.ones((1, 1))
    for k in range(n):
        out = np.einsum("pr,riq->piq", out, cores[k]).reshape(-1, cores[k].shape[2])
    return out


def tt_right_chain(cores, n: int) -> np.ndarray:
    """Contract cores after ``n`` into a (R_n, prod I_>n) matrix."""
    out = np.ones((1, 1))
    for k in range(len(cores) - 1, n, -1):
        out = np.einsum("riq,qp->rip", cores[k], out).reshape(cores[k].shape[0], -1)
    return out


def tt_canonicalize(model: TTModel, n: int) -> TTModel:
    """Gauge the cores so the mode-``n`` chain operator has identity Gram.

    Cores left of ``n`` become left-orthogonal and cores right of it
    right-orthogonal via QR sweeps; the reconstruction is unchanged.
    """
    if not 0 <= n < len(model.cores):
        raise ValueError(f"core index {n} out of range")
    cores = [c.copy() for c in model.cores]
    for k in range(n):
        r0, ik, r1 = cores[k].shape
        q, r = np.linalg.qr(cores[k].reshape(r0 * ik, r1))
        cores[k] = q.reshape(r0, ik, -1)
        cores[k + 1] = np.tensordot(r, cores[k + 1], axes=([1], [0]))
    for k in range(len(cores) - 1, n, -1):
        r0, ik, r1 = cores[k].shape
        q, r = np.linalg.qr(cores[k].reshape(r0, ik * r1).T)
        cores[k] = q.T.reshape(-1, ik, r1)
        cores[k - 1] = np.tensordot(cores[k - 1], r.T, axes=([2], [0]))
    return TTModel(cores)


def tt_core_update(data: MaskedTensor, model: TTModel, n: int, plan: AlsPlan,
                   base_seed: int = 0) -> tuple[TTModel, BlockStats]:
    """Update TT core ``n`` over the left-chain x right-chain design."""
    if not 0 <= n < len(model.cores):
        raise ValueError(f"core index {n} out of range")
    if plan.canonicalize_tt:
        model = tt_canonicalize(model, n)
    cores = model.cores
    op = TTChainOperator(tt_left_chain(cores, n), tt_right_chain(cores, n))
    r0, i_n, r1 = cores[n].shape
    current = cores[n].transpose(1, 0, 2).reshape(i_n, r0 * r1)
    solved, stats = _row_block_update(op, data, n, current, plan, base_seed)
    new_cores = list(cores)
    new_cores[n] = solved.reshape(i_n, r0, r1).transpose(1, 0, 2)
    return TTModel(new_cores), stats


def _init_model(plan: AlsPlan, data: MaskedTensor):
    shape = data.shape
    rng = np.random.default_rng(np.random.SeedSequence(entropy=plan.seed,
                                                       spawn_key=(0xC0,)))
    if plan.model == "cp":
        if len(plan.ranks) != 1:
            raise ValueError("cp expects a single rank")
        r = plan.ranks[0]
        factors = [rng.uniform(size=(s, r)) for s in shape]
        return CPModel(np.ones(r), factors).normalized()
    if plan.model == "tucker":
        if len(plan.ranks) != len(shape):
            raise ValueError("tucker expects one rank per mode")
        if plan.init == "hosvd":
            return _hosvd_init(plan, data)
        core = DenseTensor(rng.uniform(size=plan.ranks))
        factors = [rng.uniform(size=(s, r)) for s, r in zip(shape, plan.ranks)]
        return TuckerModel(core, factors)
    # tt: interior ranks R_1 .. R_{N-1}
    if len(plan.ranks) != len(shape) - 1:
        raise ValueError("tt expects N - 1 interior ranks")
    ranks = (1,) + tuple(plan.ranks) + (1,)
    cores = [rng.uniform(size=(ranks[k], shape[k], ranks[k + 1]))
             for k in range(len(shape))]
    return TTModel(cores)


def _hosvd_init(plan: AlsPlan, data: MaskedTensor) -> TuckerModel:
    """Leading singular vectors of the zero-imputed unfoldings."""
    filled = np.zeros(data.shape)
    filled.reshape(-1)[data.mask.linear] = data.values
    t = DenseTensor(filled)
    factors = []
    for mode, r in enumerate(plan.ranks):
        u, _, _ = np.linalg.svd(unfold(t, mode), full_matrices=False)
        if u.shape[1] < r:
            u = np.pad(u, ((0, 0), (0, r - u.shape[1])))
        factors.append(u[:, :r])
    core = t
    for mode, f in enumerate(factors):
        core = mode_product(core, f.T, mode)
    return TuckerModel(core, factors)


def _blocks(plan: AlsPlan, ndim: int) -> list[str]:
    if plan.model == "tucker":
        return ["core"] + [f"factor{n + 1}" for n in range(ndim)]
    if plan.model == "cp":
        return [f"factor{n + 1}" for n in range(ndim)]
    return [f"core{n + 1}" for n in range(ndim)]


def run_completion(data: MaskedTensor, plan: AlsPlan,
                   ground_truth: DenseTensor | None = None):
    """Sweep the blocks of the chosen model for ``plan.rounds`` rounds.

    Tucker sweeps update the core first, then each factor; CP and TT sweep
    the modes in order.  Returns the fitted model and the per-block trace.
    """
    ndim = len(data.shape)
    model = _init_model(plan, data)
    trace = FitTrace()
    labels = _blocks(plan, ndim)
    for rd in range(plan.rounds):
        for bi, label in enumerate(labels):
            seed = int(_block_seed(plan.seed, (rd, bi)).generate_state(1)[0])
            if plan.model == "tucker":
                if label == "core":
                    model, stats = tucker_core_update(data, model, plan, seed)
                else:
                    model, stats = tucker_factor_update(data, model, bi - 1,
                                                        plan, seed)
            elif plan.model == "cp":
                model, stats = cp_factor_update(data, model, bi, plan, seed)
            else:
                model, stats = tt_core_update(data, model, bi, plan, seed)
            train = rre(model, data.tensor, data.mask)
            test = rre(model, ground_truth) if ground_truth is not None else None
            trace.append(FitRecord(round=rd, block=label, train_rre=train,
                                   test_rre=test, wall_ms=stats.wall_ms,
                                   inner_iters=stats.inner_iters,
                                   beta=stats.beta))
    return model, trace
