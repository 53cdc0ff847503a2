"""Alternating minimization for the coupled matrix problem.

Solves A X Bᵀ + C Y Dᵀ = E for X and Y when only a subset of the entries
of E is observed.  Each half-step fixes one unknown and solves a masked
Kronecker regression for the other.

Under the package-wide row-major vectorization, vec(A X Bᵀ) = (A ⊗ B) vec(X),
so the design for the X update is the Kronecker operator with factors
(A, B) in that order; the construction self-checks the identity on a few
random probes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import DenseTensor, ObservationMask
from .lifted import LiftedProblem, RichardsonConfig, resolve_beta
from .operators import KroneckerOperator, SketchConfig
from .completion import STRATEGIES, solve_with_strategy

__all__ = ["CoupledInstance", "CoupledRecord", "coupled_half_step", "coupled_solve"]


@dataclass
class CoupledRecord:
    round: int
    block: str
    mse_train: float
    mse_full: float
    wall_ms: float
    inner_iters: int
    beta: float


class CoupledInstance:
    """Problem data plus the current (X, Y) iterates.

    X and Y start at the identity.  The operators and their mask caches are
    shared across rounds since only the responses change.
    """

    def __init__(self, a, b, c, d, e: DenseTensor, mask: ObservationMask,
                 x=None, y=None):
        self.a, self.b = np.asarray(a, float), np.asarray(b, float)
        self.c, self.d = np.asarray(c, float), np.asarray(d, float)
        n, dim = self.a.shape
        for name, m in (("b", self.b), ("c", self.c), ("d", self.d)):
            if m.shape != (n, dim):
                raise ValueError(f"matrix {name} shape {m.shape} != {(n, dim)}")
        if not isinstance(e, DenseTensor):
            e = DenseTensor(e)
        if e.shape != (n, n):
            raise ValueError(f"e shape {e.shape} != {(n, n)}")
        if mask.shape != (n, n):
            raise ValueError(f"mask shape {mask.shape} != {(n, n)}")
        self.e = e
        self.mask = mask
        self.x = np.eye(dim) if x is None else np.asarray(x, float)
        self.y = np.eye(dim) if y is None else np.asarray(y, float)
        if self.x.shape != (dim, dim) or self.y.shape != (dim, dim):
            raise ValueError("x and y must be d x d")
        self.n, self.dim = n, dim
        self._op_x = KroneckerOperator([self.a, self.b])
        self._op_y = KroneckerOperator([self.c, self.d])
        self._rows = self.mask.linear // n
        self._cols = self.mask.linear % n
        self._e_obs = mask.values_from(e)
        self._template_x = None
        self._template_y = None
        self._self_test()

    def _self_test(self):
        # vec(A X Bᵀ) must equal (A ⊗ B) vec(X) under our row ordering.
        rng = np.random.default_rng(0)
        probe = rng.standard_normal((self.dim, self.dim))
        take = rng.integers(0, self.n * self.n, size=min(4, self.n * self.n))
        lhs = (self.a @ probe @ self.b.T).reshape(-1)[take]
        rhs = self._op_x.rows(take) @ probe.reshape(-1)
        if not np.allclose(lhs, rhs, atol=1e-8 * max(1.0, np.abs(lhs).max())):
            raise AssertionError("Kronecker vectorization self-test failed")

    def _term_at_mask(self, left, mid, right) -> np.ndarray:
        """(left @ mid @ rightᵀ) evaluated only at the observed entries."""
        return np.einsum("ij,ij->i", left[self._rows] @ mid, right[self._cols])

    def _problem(self, which: str) -> LiftedProblem:
        if which == "x":
            q = self._e_obs - self._term_at_mask(self.c, self.y, self.d)
            if self._template_x is None:
                self._template_x = LiftedProblem(self._op_x, self.mask.linear, q)
                return self._template_x
            return self._template_x.with_rhs(q)
        q = self._e_obs - self._term_at_mask(self.a, self.x, self.b)
        if self._template_y is None:
            self._template_y = LiftedProblem(self._op_y, self.mask.linear, q)
            return self._template_y
        return self._template_y.with_rhs(q)

    def residual_mse(self) -> tuple[float, float]:
        """(observed-entry MSE, all-entry MSE) of the current iterates."""
        full = self.a @ self.x @ self.b.T + self.c @ self.y @ self.d.T - self.e.data
        obs = full.reshape(-1)[self.mask.linear]
        return (float(np.mean(obs ** 2)), float(np.mean(full ** 2)))


def coupled_half_step(inst: CoupledInstance, which: str, strategy: str,
                      richardson: RichardsonConfig | None = None,
                      sketch: SketchConfig | None = None,
                      seed: int = 0) -> tuple[CoupledInstance, CoupledRecord]:
    """Solve for X (or Y) with the other unknown fixed."""
    which = which.lower()
    if which not in ("x", "y"):
        raise ValueError(f"which must be 'x' or 'y', got {which!r}")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    richardson = richardson if richardson is not None else RichardsonConfig()
    sketch = sketch if sketch is not None else SketchConfig()
    start = time.perf_counter()
    prob = inst._problem(which)
    if strategy in ("mini-als", "accel", "approx"):
        beta = resolve_beta(prob, richardson.beta)
        eps_hat = richardson.epsilon_hat
        if eps_hat is None:
            eps_hat = 0.25 / beta ** 2
    else:
        beta, eps_hat = float("nan"), 0.0
    current = (inst.x if which == "x" else inst.y).reshape(-1)
    sol, iters = solve_with_strategy(prob, strategy, richardson, sketch,
                                     current, beta, eps_hat,
                                     np.random.SeedSequence(entropy=seed))
    mat = sol.reshape(inst.dim, inst.dim)
    out = CoupledInstance(inst.a, inst.b, inst.c, inst.d, inst.e, inst.mask,
                          x=mat if which == "x" else inst.x,
                          y=mat if which == "y" else inst.y)
    # carry operator/mask caches across instances
    out._op_x, out._op_y = inst._op_x, inst._op_y
    out._template_x, out._template_y = inst._template_x, inst._template_y
    mse_train, mse_full = out.residual_mse()
    record = CoupledRecord(round=-1, block=which.upper(), mse_train=mse_train,
                           mse_full=mse_full,
                           wall_ms=(time.perf_counter() - start) * 1e3,
                           inner_iters=iters, beta=beta)
    return out, record


def coupled_solve(inst: CoupledInstance, rounds: int, strategy: str,
                  richardson: RichardsonConfig | None = None,
                  sketch: SketchConfig | None = None,
                  seed: int = 0):
    """Alternate X and Y half-steps; returns (X, Y, records)."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    records: list[CoupledRecord] = []
    for rd in range(rounds):
        for bi, which in enumerate(("x", "y")):
            step_seed = int(np.random.SeedSequence(
                entropy=seed, spawn_key=(rd, bi)).generate_state(1)[0])
            inst, rec = coupled_half_step(inst, which, strategy, richardson,
                                          sketch, step_seed)
            rec.round = rd
            records.append(rec)
    return inst.x, inst.y, records
