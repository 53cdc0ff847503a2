"""Dense tensors, observation masks, and low-rank model containers.

Everything in this package shares a single linear ordering: row-major
(C order) with the last index varying fastest.  Unfoldings, vectorization,
Khatri-Rao / Kronecker row orders, and mask linear indices all use it, so
one bijection connects tensor entries to design-matrix rows.
"""

from __future__ import annotations

import warnings

import numpy as np

__all__ = [
    "DenseTensor",
    "ObservationMask",
    "CPModel",
    "TuckerModel",
    "TTModel",
    "unfold",
    "fold",
    "vectorize",
    "devectorize",
    "mode_product",
    "reconstruct",
    "frobenius_norm",
    "inner",
    "rre",
]


class DenseTensor:
    """N-way array of float64 values, immutable after construction."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        if arr.ndim < 1:
            arr = arr.reshape(1)
        if any(s < 1 for s in arr.shape):
            raise ValueError(f"all dimensions must be >= 1, got shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("DenseTensor is immutable")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        return f"DenseTensor(shape={self.shape})"


class ObservationMask:
    """Sorted set of revealed entries of a tensor, stored as linear indices.

    Linear indices follow the package-wide row-major order, matching
    ``vectorize``.  The complement is the sorted set difference against
    the full index range.
    """

    __slots__ = ("shape", "linear")

    def __init__(self, shape, linear):
        shape = tuple(int(s) for s in shape)
        if len(shape) < 1 or any(s < 1 for s in shape):
            raise ValueError(f"invalid mask shape {shape}")
        idx = np.asarray(linear, dtype=np.int64).reshape(-1)
        total = int(np.prod(shape))
        if idx.size:
            if idx.min() < 0 or idx.max() >= total:
                raise ValueError("mask index out of bounds")
            if np.any(np.diff(idx) <= 0):
                idx = np.unique(idx)
        idx.flags.writeable = False
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "linear", idx)

    def __setattr__(self, name, value):
        raise AttributeError("ObservationMask is immutable")

    @classmethod
    def full(cls, shape) -> "ObservationMask":
        return cls(shape, np.arange(int(np.prod(shape)), dtype=np.int64))

    @classmethod
    def from_multi(cls, shape, multi) -> "ObservationMask":
        """Build from an iterable of multi-indices (rows of an (m, N) array)."""
        multi = np.asarray(multi, dtype=np.int64)
        if multi.ndim == 1:
            multi = multi.reshape(1, -1)
        linear = np.ravel_multi_index(tuple(multi.T), shape)
        return cls(shape, np.sort(linear))

    @classmethod
    def random(cls, shape, p: float, seed=None) -> "ObservationMask":
        """Reveal exactly round(p * total) entries, sampled without replacement."""
        if not 0.0 < p <= 1.0:
            raise ValueError(f"observation rate p must be in (0, 1], got {p}")
        total = int(np.prod(shape))
        count = int(round(p * total))
        count = max(1, min(count, total))
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        linear = rng.choice(total, size=count, replace=False)
        return cls(shape, np.sort(linear))

    def __len__(self) -> int:
        return int(self.linear.size)

    @property
    def total(self) -> int:
        return int(np.prod(self.shape))

    @property
    def rate(self) -> float:
        return len(self) / self.total

    def complement(self) -> "ObservationMask":
        rest = np.setdiff1d(np.arange(self.total, dtype=np.int64), self.linear,
                            assume_unique=True)
        return ObservationMask(self.shape, rest)

    def multi_indices(self) -> np.ndarray:
        """(m, N) array of multi-indices in ascending linear order."""
        return np.array(np.unravel_index(self.linear, self.shape)).T

    def mode_groups(self, mode: int):
        """Split the mask by mode-``mode`` slice.

        Returns a list with one entry per slice index i in [0, I_mode):
        ``(cols, pos)`` where ``cols`` are the observed column indices of
        row i of the mode-``mode`` unfolding (ascending) and ``pos`` maps
        each of them back into mask-aligned value arrays.
        """
        ndim = len(self.shape)
        if not 0 <= mode < ndim:
            raise ValueError(f"mode {mode} out of range for order {ndim}")
        multi = np.unravel_index(self.linear, self.shape)
        rows = multi[mode]
        rest_axes = [ax for ax in range(ndim) if ax != mode]
        if rest_axes:
            rest_dims = tuple(self.shape[ax] for ax in rest_axes)
            cols = np.ravel_multi_index(tuple(multi[ax] for ax in rest_axes), rest_dims)
        else:
            cols = np.zeros(len(self), dtype=np.int64)
        order = np.lexsort((cols, rows))
        rows_sorted = rows[order]
        boundaries = np.searchsorted(rows_sorted, np.arange(self.shape[mode] + 1))
        groups = []
        for i in range(self.shape[mode]):
            sel = order[boundaries[i]:boundaries[i + 1]]
            groups.append((cols[sel], sel))
        return groups

    def values_from(self, t: DenseTensor) -> np.ndarray:
        """Observed entries of ``t`` in mask order."""
        if t.shape != self.shape:
            raise ValueError(f"tensor shape {t.shape} != mask shape {self.shape}")
        return t.data.reshape(-1)[self.linear]


class CPModel:
    """Weighted sum of rank-one terms: weights (R,) and N factors (I_n, R)."""

    __slots__ = ("weights", "factors")

    def __init__(self, weights, factors):
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        factors = [np.asarray(f, dtype=np.float64) for f in factors]
        if not factors:
            raise ValueError("CPModel needs at least one factor")
        r = weights.size
        for f in factors:
            if f.ndim != 2 or f.shape[1] != r:
                raise ValueError(f"factor shape {f.shape} incompatible with rank {r}")
        self.weights = weights
        self.factors = factors

    @property
    def rank(self) -> int:
        return self.weights.size

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    def normalized(self) -> "CPModel":
        """Fold column norms into the weights so each factor column has unit norm.

        A zero column keeps its previous direction (weight becomes zero).
        """
        weights = self.weights.copy()
        factors = []
        for f in self.factors:
            norms = np.linalg.norm(f, axis=0)
            safe = np.where(norms > 0, norms, 1.0)
            factors.append(f / safe)
            weights = weights * norms
        return CPModel(weights, factors)


class TuckerModel:
    """Core tensor (R_1, ..., R_N) with N factor matrices (I_n, R_n)."""

    __slots__ = ("core", "factors")

    def __init__(self, core: DenseTensor, factors):
        if not isinstance(core, DenseTensor):
            core = DenseTensor(core)
        factors = [np.asarray(f, dtype=np.float64) for f in factors]
        if len(factors) != core.ndim:
            raise ValueError(f"{len(factors)} factors for order-{core.ndim} core")
        for n, f in enumerate(factors):
            if f.ndim != 2 or f.shape[1] != core.shape[n]:
                raise ValueError(f"factor {n} shape {f.shape} vs core rank {core.shape[n]}")
            if f.shape[1] > f.shape[0]:
                warnings.warn(f"factor {n} rank {f.shape[1]} exceeds its "
                              f"dimension {f.shape[0]}", stacklevel=2)
        self.core = core
        self.factors = factors

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def ranks(self) -> tuple[int, ...]:
        return self.core.shape


class TTModel:
    """Chain of third-order cores (R_{n-1}, I_n, R_n) with R_0 = R_N = 1."""

    __slots__ = ("cores",)

    def __init__(self, cores):
        cores = [np.asarray(c, dtype=np.float64) for c in cores]
        if not cores:
            raise ValueError("TTModel needs at least one core")
        for c in cores:
            if c.ndim != 3:
                raise ValueError(f"cores must be third order, got shape {c.shape}")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise ValueError("boundary ranks must equal 1")
        for a, b in zip(cores[:-1], cores[1:]):
            if a.shape[2] != b.shape[0]:
                raise ValueError(f"adjacent rank mismatch: {a.shape} -> {b.shape}")
        self.cores = cores

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple([1] + [c.shape[2] for c in self.cores])


def _check_mode(t: DenseTensor, mode: int):
    if not 0 <= mode < t.ndim:
        raise ValueError(f"mode {mode} out of range for order-{t.ndim} tensor")


def unfold(t: DenseTensor, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding: fibers of the given mode as rows.

    Columns enumerate the remaining indices lexicographically with the
    last one fastest (row-major).
    """
    _check_mode(t, mode)
    return np.moveaxis(t.data, mode, 0).reshape(t.shape[mode], -1)


def fold(mat: np.ndarray, mode: int, shape) -> DenseTensor:
    """Inverse of :func:`unfold` for the given full tensor shape."""
    shape = tuple(int(s) for s in shape)
    if not 0 <= mode < len(shape):
        raise ValueError(f"mode {mode} out of range for shape {shape}")
    rest = tuple(s for ax, s in enumerate(shape) if ax != mode)
    arr = np.asarray(mat, dtype=np.float64).reshape((shape[mode],) + rest)
    return DenseTensor(np.moveaxis(arr, 0, mode))


def vectorize(t: DenseTensor) -> np.ndarray:
    """Flatten in row-major order (last index fastest)."""
    return t.data.reshape(-1)


def devectorize(vec: np.ndarray, shape) -> DenseTensor:
    shape = tuple(int(s) for s in shape)
    vec = np.asarray(vec, dtype=np.float64).reshape(-1)
    if vec.size != int(np.prod(shape)):
        raise ValueError(f"vector length {vec.size} != prod{shape}")
    return DenseTensor(vec.reshape(shape))


def mode_product(t: DenseTensor, m: np.ndarray, mode: int) -> DenseTensor:
    """Multiply each mode-``mode`` fiber of ``t`` by the matrix ``m``."""
    _check_mode(t, mode)
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != t.shape[mode]:
        raise ValueError(f"matrix shape {m.shape} incompatible with mode size {t.shape[mode]}")
    out = np.tensordot(m, t.data, axes=([1], [mode]))
    return DenseTensor(np.moveaxis(out, 0, mode))


def _reconstruct_cp(model: CPModel) -> DenseTensor:
    n = len(model.factors)
    letters = [chr(ord("a") + i) for i in range(n)]
    spec = "z," + ",".join(f"{c}z" for c in letters) + "->" + "".join(letters)
    return DenseTensor(np.einsum(spec, model.weights, *model.factors, optimize=True))


def _reconstruct_tucker(model: TuckerModel) -> DenseTensor:
    out = model.core
    for mode, f in enumerate(model.factors):
        out = mode_product(out, f, mode)
    return out


def _reconstruct_tt(model: TTModel) -> DenseTensor:
    out = model.cores[0][0]  # (I_1, R_1)
    for core in model.cores[1:]:
        out = np.tensordot(out, core, axes=([-1], [0]))
    return DenseTensor(out[..., 0])


def reconstruct(model) -> DenseTensor:
    """Evaluate a CP / Tucker / TT model as a dense tensor."""
    if isinstance(model, CPModel):
        return _reconstruct_cp(model)
    if isinstance(model, TuckerModel):
        return _reconstruct_tucker(model)
    if isinstance(model, TTModel):
        return _reconstruct_tt(model)
    raise TypeError(f"cannot reconstruct {type(model).__name__}")


def frobenius_norm(t: DenseTensor) -> float:
    return float(np.linalg.norm(t.data))


def inner(t: DenseTensor, u: DenseTensor) -> float:
    if t.shape != u.shape:
        raise ValueError(f"shape mismatch {t.shape} vs {u.shape}")
    return float(np.dot(t.data.reshape(-1), u.data.reshape(-1)))


def rre(candidate, reference: DenseTensor, mask: ObservationMask | None = None) -> float:
    """Relative reconstruction error of a model or tensor against ``reference``.

    With a mask, both numerator and denominator are restricted to the
    observed entries (train error); without one, all entries are used
    (test error).  A zero denominator yields 0.0 for an exact match and
    inf otherwise rather than raising.
    """
    if isinstance(candidate, (CPModel, TuckerModel, TTModel)):
        candidate = reconstruct(candidate)
    if candidate.shape != reference.shape:
        raise ValueError(f"shape mismatch {candidate.shape} vs {reference.shape}")
    if mask is None:
        num = np.linalg.norm(candidate.data - reference.data)
        den = np.linalg.norm(reference.data)
    else:
        xv = mask.values_from(candidate)
        rv = mask.values_from(reference)
        num = np.linalg.norm(xv - rv)
        den = np.linalg.norm(rv)
    if den == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return float(num / den)
