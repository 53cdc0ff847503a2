"""Implicit tall design matrices and leverage-score row sampling.

Each operator represents an I x R matrix without materializing it: rows are
evaluated on demand from per-factor data, Gram matrices come from product
identities, and leverage scores either factor across the Kronecker structure
or are computed exactly through the Gram pseudo-inverse at desk scale.

Row linearization is row-major over the factor index tuple (last factor
fastest), matching the tensor vectorization in :mod:`tensor_lift.core`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.linalg

__all__ = [
    "RCOND",
    "StructuredOperator",
    "DenseOperator",
    "KhatriRaoOperator",
    "KroneckerOperator",
    "KroneckerTimesMatrixOperator",
    "TTChainOperator",
    "LeverageProfile",
    "SketchConfig",
    "SketchResult",
    "RankDeficiencyWarning",
    "BetaEstimationError",
    "sample_sketch",
    "solve_least_squares",
    "estimate_beta",
    "incoherence",
    "ridge_leverage_scores",
]

# Singular values below RCOND * sigma_max are treated as zero.
RCOND = 1e-12

_CHUNK = 8192


class RankDeficiencyWarning(UserWarning):
    """Normal equations were solved through a rank-deficient pseudo-inverse."""


class BetaEstimationError(ValueError):
    """The masked Gram matrix is singular; beta has no finite exact value."""


def _pinv_psd(g: np.ndarray) -> tuple[np.ndarray, int]:
    """Pseudo-inverse of a symmetric PSD matrix, plus its numerical rank."""
    w, v = np.linalg.eigh(g)
    tol = RCOND * max(w.max(initial=0.0), 0.0)
    keep = w > tol
    rank = int(np.count_nonzero(keep))
    inv = (v[:, keep] / w[keep]) @ v[:, keep].T
    return inv, rank


def _halfinv_psd(g: np.ndarray) -> np.ndarray:
    """Matrix H with H Hᵀ = pinv(g); used for row quadratic forms."""
    w, v = np.linalg.eigh(g)
    tol = RCOND * max(w.max(initial=0.0), 0.0)
    keep = w > tol
    return v[:, keep] / np.sqrt(w[keep])


def _dense_row_scores(mat: np.ndarray) -> tuple[np.ndarray, float]:
    """Exact leverage scores of an explicit matrix via thin SVD."""
    u, s, _ = np.linalg.svd(mat, full_matrices=False)
    keep = s > RCOND * max(s.max(initial=0.0), 0.0)
    scores = np.einsum("ij,ij->i", u[:, keep], u[:, keep])
    return np.clip(scores, 0.0, 1.0), float(np.count_nonzero(keep))


@dataclass
class LeverageProfile:
    """Leverage scores of an operator, possibly in per-factor product form.

    ``factor_scores`` is set for Kronecker-structured kinds where the score
    of row (i_1, ..., i_K) is the product of per-factor scores; sampling
    then draws each factor index independently and never materializes the
    full length-I vector.
    """

    n_rows: int
    total: float
    factor_scores: list[np.ndarray] | None = None
    _scores: np.ndarray | None = None

    @property
    def scores(self) -> np.ndarray:
        if self._scores is None:
            self._scores = reduce(np.kron, self.factor_scores)
        return self._scores

    def probabilities(self) -> np.ndarray:
        p = self.scores / self.scores.sum()
        return p

    def score_at(self, idx: np.ndarray) -> np.ndarray:
        if self._scores is not None or self.factor_scores is None:
            return self.scores[idx]
        dims = tuple(len(s) for s in self.factor_scores)
        parts = np.unravel_index(idx, dims)
        out = np.ones(len(idx))
        for s, part in zip(self.factor_scores, parts):
            out *= s[part]
        return out

    def sample(self, s: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``s`` i.i.d. row indices; returns (indices, draw probabilities)."""
        if self.total <= 0:
            raise ValueError("degenerate leverage profile: all scores are zero")
        if self.factor_scores is not None and self._scores is None:
            dims = tuple(len(f) for f in self.factor_scores)
            parts = []
            probs = np.ones(s)
            for f in self.factor_scores:
                pf = f / f.sum()
                draw = rng.choice(len(f), size=s, replace=True, p=pf)
                probs *= pf[draw]
                parts.append(draw)
            idx = np.ravel_multi_index(tuple(parts), dims)
            return idx, probs
        p = self.probabilities()
        idx = rng.choice(self.n_rows, size=s, replace=True, p=p)
        return idx, p[idx]


class StructuredOperator:
    """Base class: an implicit I x R design matrix."""

    shape: tuple[int, int]

    def __init__(self):
        self._gram = None
        self._pinv_gram = None
        self._gram_rank = None
        self._leverage = None

    @property
    def n_rows(self) -> int:
        return self.shape[0]

    @property
    def n_cols(self) -> int:
        return self.shape[1]

    def rows(self, idx) -> np.ndarray:
        """Evaluate the given rows; idx is an array of linear row indices."""
        raise NotImplementedError

    def row(self, i: int) -> np.ndarray:
        return self.rows(np.asarray([i], dtype=np.int64))[0]

    def _gram_impl(self) -> np.ndarray:
        raise NotImplementedError

    def gram(self) -> np.ndarray:
        if self._gram is None:
            g = self._gram_impl()
            self._gram = (g + g.T) / 2.0
        return self._gram

    def pinv_gram(self) -> np.ndarray:
        if self._pinv_gram is None:
            self._pinv_gram, self._gram_rank = _pinv_psd(self.gram())
        return self._pinv_gram

    def gram_rank(self) -> int:
        self.pinv_gram()
        return self._gram_rank

    def materialize(self, max_entries: int = 50_000_000) -> np.ndarray:
        rows, cols = self.shape
        if rows * cols > max_entries:
            raise MemoryError(
                f"materializing {rows}x{cols} exceeds the {max_entries} entry budget")
        return self._materialize_impl()

    def _materialize_impl(self) -> np.ndarray:
        out = np.empty(self.shape)
        for start in range(0, self.n_rows, _CHUNK):
            idx = np.arange(start, min(start + _CHUNK, self.n_rows), dtype=np.int64)
            out[idx] = self.rows(idx)
        return out

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        """Aᵀ y for a full-height vector, evaluated in row chunks."""
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.size != self.n_rows:
            raise ValueError(f"rhs length {y.size} != row count {self.n_rows}")
        out = np.zeros(self.n_cols)
        for start in range(0, self.n_rows, _CHUNK):
            idx = np.arange(start, min(start + _CHUNK, self.n_rows), dtype=np.int64)
            out += self.rows(idx).T @ y[idx]
        return out

    def _leverage_impl(self) -> LeverageProfile:
        # Exact fallback: l_i = a_i (AᵀA)⁺ a_iᵀ computed chunk by chunk.
        half = _halfinv_psd(self.gram())
        scores = np.empty(self.n_rows)
        for start in range(0, self.n_rows, _CHUNK):
            idx = np.arange(start, min(start + _CHUNK, self.n_rows), dtype=np.int64)
            proj = self.rows(idx) @ half
            scores[idx] = np.einsum("ij,ij->i", proj, proj)
        np.clip(scores, 0.0, 1.0, out=scores)
        return LeverageProfile(self.n_rows, float(scores.sum()), _scores=scores)

    def leverage(self) -> LeverageProfile:
        if self._leverage is None:
            self._leverage = self._leverage_impl()
        return self._leverage

    def max_row_norm_sq(self) -> float:
        best = 0.0
        for start in range(0, self.n_rows, _CHUNK):
            idx = np.arange(start, min(start + _CHUNK, self.n_rows), dtype=np.int64)
            r = self.rows(idx)
            best = max(best, float(np.einsum("ij,ij->i", r, r).max()))
        return best


class DenseOperator(StructuredOperator):
    """Explicit matrix wrapped in the operator interface."""

    def __init__(self, matrix):
        super().__init__()
        self.matrix = np.asarray(matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ValueError("DenseOperator expects a matrix")
        self.shape = self.matrix.shape

    def rows(self, idx):
        return self.matrix[np.asarray(idx, dtype=np.int64)]

    def _gram_impl(self):
        return self.matrix.T @ self.matrix

    def _materialize_impl(self):
        return self.matrix.copy()

    def rmatvec(self, y):
        return self.matrix.T @ np.asarray(y, dtype=np.float64).reshape(-1)

    def _leverage_impl(self):
        scores, rank = _dense_row_scores(self.matrix)
        return LeverageProfile(self.n_rows, rank, _scores=scores)


def _check_factors(factors, same_cols: bool):
    factors = [np.asarray(f, dtype=np.float64) for f in factors]
    if not factors:
        raise ValueError("need at least one factor")
    for f in factors:
        if f.ndim != 2:
            raise ValueError("factors must be matrices")
    if same_cols and len({f.shape[1] for f in factors}) != 1:
        raise ValueError("Khatri-Rao factors must share a column count")
    return factors


class KhatriRaoOperator(StructuredOperator):
    """Column-wise Kronecker product of factors; rows are Hadamard products.

    Row (i_1, ..., i_K) is the elementwise product of row i_k of each
    factor.  The Gram matrix is the Hadamard product of the factor Grams.
    Leverage scores do not factor, so they are computed exactly from the
    Gram pseudo-inverse (affordable at desk scale).
    """

    def __init__(self, factors):
        super().__init__()
        self.factors = _check_factors(factors, same_cols=True)
        self.dims = tuple(f.shape[0] for f in self.factors)
        self.shape = (int(np.prod(self.dims)), self.factors[0].shape[1])

    def rows(self, idx):
        parts = np.unravel_index(np.asarray(idx, dtype=np.int64), self.dims)
        out = self.factors[0][parts[0]].copy()
        for f, part in zip(self.factors[1:], parts[1:]):
            out *= f[part]
        return out

    def _gram_impl(self):
        g = self.factors[0].T @ self.factors[0]
        for f in self.factors[1:]:
            g = g * (f.T @ f)
        return g

    def _materialize_impl(self):
        out = self.factors[0]
        for f in self.factors[1:]:
            out = (out[:, None, :] * f[None, :, :]).reshape(-1, self.n_cols)
        return out.copy()


class KroneckerOperator(StructuredOperator):
    """Kronecker product of factors; leverage scores factor per dimension."""

    def __init__(self, factors):
        super().__init__()
        self.factors = _check_factors(factors, same_cols=False)
        self.dims = tuple(f.shape[0] for f in self.factors)
        self.col_dims = tuple(f.shape[1] for f in self.factors)
        self.shape = (int(np.prod(self.dims)), int(np.prod(self.col_dims)))

    def rows(self, idx):
        parts = np.unravel_index(np.asarray(idx, dtype=np.int64), self.dims)
        out = self.factors[0][parts[0]]
        for f, part in zip(self.factors[1:], parts[1:]):
            out = (out[:, :, None] * f[part][:, None, :]).reshape(len(idx), -1)
        return out

    def _gram_impl(self):
        return reduce(np.kron, [f.T @ f for f in self.factors])

    def _materialize_impl(self):
        return reduce(np.kron, self.factors)

    def rmatvec(self, y):
        # Aᵀy == vectorized multi-mode contraction of y by each factor transpose.
        y = np.asarray(y, dtype=np.float64).reshape(self.dims)
        for k, f in enumerate(self.factors):
            y = np.tensordot(f.T, y, axes=([1], [k]))
            y = np.moveaxis(y, 0, k)
        return y.reshape(-1)

    def _leverage_impl(self):
        tables, total = [], 1.0
        for f in self.factors:
            scores, rank = _dense_row_scores(f)
            tables.append(scores)
            total *= rank
        return LeverageProfile(self.n_rows, total, factor_scores=tables)


class KroneckerTimesMatrixOperator(StructuredOperator):
    """(Kronecker product of factors) @ right, for a fixed right matrix."""

    def __init__(self, factors, right):
        super().__init__()
        self.kron = KroneckerOperator(factors)
        self.right = np.asarray(right, dtype=np.float64)
        if self.right.ndim != 2 or self.right.shape[0] != self.kron.n_cols:
            raise ValueError(
                f"right matrix shape {self.right.shape} incompatible with "
                f"Kronecker column count {self.kron.n_cols}")
        self.shape = (self.kron.n_rows, self.right.shape[1])

    @property
    def factors(self):
        return self.kron.factors

    def rows(self, idx):
        return self.kron.rows(idx) @ self.right

    def _gram_impl(self):
        return self.right.T @ self.kron.gram() @ self.right

    def _materialize_impl(self):
        return self.kron._materialize_impl() @ self.right

    def rmatvec(self, y):
        return self.right.T @ self.kron.rmatvec(y)


class TTChainOperator(StructuredOperator):
    """Kronecker product of a left chain (I_L, R_a) and right chain (R_b, I_R).

    Row (i, j) is outer(left[i], right[:, j]) flattened with the right-rank
    index fastest.  When both chains are orthonormal (canonical form) the
    Gram is the identity and leverage scores are plain row/column norms.
    """

    def __init__(self, left, right):
        super().__init__()
        self.left = np.asarray(left, dtype=np.float64)
        self.right = np.asarray(right, dtype=np.float64)
        if self.left.ndim != 2 or self.right.ndim != 2:
            raise ValueError("chains must be matrices")
        self.dims = (self.left.shape[0], self.right.shape[1])
        self.shape = (self.left.shape[0] * self.right.shape[1],
                      self.left.shape[1] * self.right.shape[0])

    def rows(self, idx):
        li, ri = np.unravel_index(np.asarray(idx, dtype=np.int64), self.dims)
        return (self.left[li][:, :, None] * self.right.T[ri][:, None, :]).reshape(
            len(idx), self.n_cols)

    def _gram_impl(self):
        return np.kron(self.left.T @ self.left, self.right @ self.right.T)

    def _materialize_impl(self):
        return np.kron(self.left, self.right.T)

    def _leverage_impl(self):
        ls, lrank = _dense_row_scores(self.left)
        rs, rrank = _dense_row_scores(self.right.T)
        return LeverageProfile(self.n_rows, lrank * rrank, factor_scores=[ls, rs])


@dataclass(frozen=True)
class SketchConfig:
    """Row-sampling policy for the approximate least-squares solves.

    ``epsilon_hat == 0`` with no ``sample_count`` override is the exact-solve
    sentinel: the full system is used and no sampling happens.  Otherwise the
    sample count defaults to ceil(c * R * log(max(R, 2)) / (epsilon_hat *
    delta)), clamped to the row count.
    """

    epsilon_hat: float = 0.0
    delta: float = 0.1
    sample_count: int | None = None
    oversample_c: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon_hat < 1.0:
            raise ValueError(f"epsilon_hat must be in [0, 1), got {self.epsilon_hat}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        if self.sample_count is not None and self.sample_count < 1:
            raise ValueError("sample_count must be positive")
        if self.oversample_c <= 0:
            raise ValueError("oversample_c must be positive")

    @property
    def exact(self) -> bool:
        return self.epsilon_hat == 0.0 and self.sample_count is None

    def sample_size(self, n_cols: int, n_rows: int) -> int:
        if self.sample_count is not None:
            return min(self.sample_count, n_rows)
        if self.epsilon_hat == 0.0:
            return n_rows
        s = math.ceil(self.oversample_c * n_cols * math.log(max(n_cols, 2))
                      / (self.epsilon_hat * self.delta))
        return max(1, min(s, n_rows))


@dataclass
class SketchResult:
    indices: np.ndarray
    weights: np.ndarray
    design: np.ndarray
    rhs: np.ndarray


def _rhs_values(rhs, idx: np.ndarray) -> np.ndarray:
    if callable(rhs):
        return np.asarray(rhs(idx), dtype=np.float64).reshape(-1)
    return np.asarray(rhs, dtype=np.float64).reshape(-1)[idx]


def sample_sketch(op: StructuredOperator, rhs, cfg: SketchConfig,
                  rng: np.random.Generator | None = None) -> SketchResult:
    """Leverage-score row sample of (A, b) with 1/sqrt(s p_i) rescaling.

    ``rhs`` is either a full vector or a callable mapping row indices to
    values; in the sampled regime it is only queried at the drawn rows.
    With the exact sentinel the full unweighted system is returned.
    """
    if cfg.exact:
        idx = np.arange(op.n_rows, dtype=np.int64)
        return SketchResult(idx, np.ones(op.n_rows), op.materialize(),
                            _rhs_values(rhs, idx))
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    s = cfg.sample_size(op.n_cols, op.n_rows)
    idx, probs = op.leverage().sample(s, rng)
    weights = 1.0 / np.sqrt(s * probs)
    design = op.rows(idx) * weights[:, None]
    rhs_vals = _rhs_values(rhs, idx) * weights
    return SketchResult(idx, weights, design, rhs_vals)


def solve_least_squares(op: StructuredOperator, rhs, cfg: SketchConfig,
                        rng: np.random.Generator | None = None) -> np.ndarray:
    """Minimize ||A x - rhs||: exactly via the normal equations when the
    config is exact, otherwise on a leverage-score sketch."""
    if cfg.exact:
        x = op.pinv_gram() @ op.rmatvec(_rhs_values(rhs, np.arange(op.n_rows)))
        if op.gram_rank() < op.n_cols:
            warnings.warn("Gram matrix is numerically singular; returned the "
                          "pseudo-inverse solution", RankDeficiencyWarning,
                          stacklevel=2)
        return x
    sketch = sample_sketch(op, rhs, cfg, rng)
    x, *_ = np.linalg.lstsq(sketch.design, sketch.rhs, rcond=RCOND)
    return x


def estimate_beta(op: StructuredOperator, omega, mode: str = "exact") -> float:
    """Spectral factor beta with A_Ωᵀ A_Ω ≼ AᵀA ≼ beta A_Ωᵀ A_Ω.

    Exact mode solves the generalized eigenvalue problem on the two R x R
    Grams; heuristic mode returns 2 / p for observation rate p.
    """
    omega = np.asarray(omega, dtype=np.int64).reshape(-1)
    if omega.size == 0:
        raise ValueError("omega is empty")
    if mode == "heuristic":
        return 2.0 * op.n_rows / omega.size
    if mode != "exact":
        raise ValueError(f"unknown beta mode {mode!r}")
    sub = op.rows(omega)
    gram_omega = sub.T @ sub
    try:
        eigs = scipy.linalg.eigh(op.gram(), gram_omega, eigvals_only=True)
    except (scipy.linalg.LinAlgError, np.linalg.LinAlgError) as exc:
        raise BetaEstimationError(
            "masked Gram matrix is singular; add ridge regularization or "
            "observe more entries per slice") from exc
    if not np.all(np.isfinite(eigs)):
        raise BetaEstimationError(
            "masked Gram matrix is singular; add ridge regularization or "
            "observe more entries per slice")
    return max(1.0, float(eigs[-1]))


class Incoherence(tuple):
    """(row, column) incoherence pair; mu = dim / rank * max leverage."""

    def __new__(cls, rows: float, cols: float):
        return super().__new__(cls, (rows, cols))

    @property
    def rows(self) -> float:
        return self[0]

    @property
    def cols(self) -> float:
        return self[1]


def incoherence(op: StructuredOperator) -> Incoherence:
    """Row and column incoherence parameters from max leverage scores."""
    profile = op.leverage()
    if profile.factor_scores is not None and profile._scores is None:
        max_row = float(np.prod([s.max() for s in profile.factor_scores]))
    else:
        max_row = float(profile.scores.max())
    w, v = np.linalg.eigh(op.gram())
    keep = w > RCOND * max(w.max(initial=0.0), 0.0)
    rank = int(np.count_nonzero(keep))
    if rank == 0:
        raise ValueError("operator has rank zero")
    col_scores = np.einsum("ij,ij->i", v[:, keep], v[:, keep])
    mu_rows = op.n_rows * max_row / rank
    mu_cols = op.n_cols * float(col_scores.max()) / rank
    return Incoherence(mu_rows, mu_cols)


def ridge_leverage_scores(op: StructuredOperator, alpha: float) -> np.ndarray:
    """Scores a_i (AᵀA + alpha zeta^2 I)⁻¹ a_iᵀ with zeta the max row norm.

    Each score is at most 1 / alpha.
    """
    if alpha < 1.0:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    zeta_sq = op.max_row_norm_sq()
    if zeta_sq == 0.0:
        raise ValueError("operator has no nonzero rows")
    shifted = op.gram() + alpha * zeta_sq * np.eye(op.n_cols)
    half = np.linalg.cholesky(np.linalg.inv(shifted))
    scores = np.empty(op.n_rows)
    for start in range(0, op.n_rows, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, op.n_rows), dtype=np.int64)
        proj = op.rows(idx) @ half
        scores[idx] = np.einsum("ij,ij->i", proj, proj)
    return scores
