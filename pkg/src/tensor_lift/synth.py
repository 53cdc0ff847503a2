"""Synthetic low-rank datasets with uniform [0, 1) entries."""

from __future__ import annotations

import numpy as np

from .core import CPModel, DenseTensor, ObservationMask, TTModel, TuckerModel, reconstruct
from .coupled import CoupledInstance

__all__ = [
    "random_cp",
    "random_tucker",
    "random_tt",
    "random_coupled",
]


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def random_cp(shape, rank: int, seed=None) -> tuple[DenseTensor, CPModel]:
    rng = _rng(seed)
    factors = [rng.uniform(size=(s, rank)) for s in shape]
    model = CPModel(np.ones(rank), factors).normalized()
    return reconstruct(model), model


def random_tucker(shape, ranks, seed=None) -> tuple[DenseTensor, TuckerModel]:
    if len(ranks) != len(shape):
        raise ValueError("need one rank per mode")
    rng = _rng(seed)
    core = DenseTensor(rng.uniform(size=tuple(ranks)))
    factors = [rng.uniform(size=(s, r)) for s, r in zip(shape, ranks)]
    model = TuckerModel(core, factors)
    return reconstruct(model), model


def random_tt(shape, interior_ranks, seed=None) -> tuple[DenseTensor, TTModel]:
    if len(interior_ranks) != len(shape) - 1:
        raise ValueError("need N - 1 interior ranks")
    rng = _rng(seed)
    ranks = (1,) + tuple(interior_ranks) + (1,)
    cores = [rng.uniform(size=(ranks[k], shape[k], ranks[k + 1]))
             for k in range(len(shape))]
    model = TTModel(cores)
    return reconstruct(model), model


def random_coupled(n: int, d: int, p: float, seed=None):
    """Planted A X Bᵀ + C Y Dᵀ = E instance with a p-fraction mask.

    Returns (instance, x_true, y_true); the instance starts at X = Y = I.
    """
    rng = _rng(seed)
    a, b, c, dd = (rng.uniform(size=(n, d)) for _ in range(4))
    x_true = rng.uniform(size=(d, d))
    y_true = rng.uniform(size=(d, d))
    e = DenseTensor(a @ x_true @ b.T + c @ y_true @ dd.T)
    mask = ObservationMask.random((n, n), p, rng)
    return CoupledInstance(a, b, c, dd, e, mask), x_true, y_true
