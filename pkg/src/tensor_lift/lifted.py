"""Masked least squares via lifting and approximate Richardson iteration.

A masked problem min ||A_Ω x - q|| is lifted to the full design matrix A by
treating the unobserved responses as free variables.  Alternating between
imputing those responses (b_Ω̄ <- A_Ω̄ x) and re-solving the structured full
regression (mini-ALS) reproduces Richardson iterations preconditioned by
AᵀA, so the masked solution is reached at a (1 - 1/beta) rate where beta
bounds AᵀA against A_Ωᵀ A_Ω.  The full solve may itself be approximated by
leverage-score row sampling; imputed responses are then only evaluated at
the sampled rows.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .operators import (
    BetaEstimationError,
    RankDeficiencyWarning,
    SketchConfig,
    StructuredOperator,
    estimate_beta,
)

__all__ = [
    "LiftedProblem",
    "RichardsonConfig",
    "SolveReport",
    "iteration_bound",
    "mini_als_step",
    "em_one_step",
    "approx_mini_als",
    "accelerated_mini_als",
]

# Exact beta is affordable below these sizes; otherwise fall back to the
# observation-rate heuristic with a safety factor.
_AUTO_EXACT_MAX_COLS = 64
_AUTO_EXACT_MAX_ROWS = 100_000
_AUTO_HEURISTIC_SAFETY = 1.5

_EXTRAPOLATION_FLOOR = 1e-14


class LiftedProblem:
    """A full design matrix, a row subset, and the observed responses.

    ``omega`` holds sorted linear row indices into ``op``; ``q`` holds the
    corresponding responses.  The zero-masked pair (rows of A on omega and
    zero elsewhere, q on omega and zero elsewhere) is never materialized;
    its Gram and normal-equation vector are formed from the omega rows.
    """

    def __init__(self, op: StructuredOperator, omega, q):
        omega = np.asarray(omega, dtype=np.int64).reshape(-1)
        q = np.asarray(q, dtype=np.float64).reshape(-1)
        if omega.size == 0:
            raise ValueError("omega must contain at least one row")
        if omega.size != q.size:
            raise ValueError(f"|omega| = {omega.size} but |q| = {q.size}")
        if np.any(np.diff(omega) <= 0):
            order = np.argsort(omega, kind="stable")
            omega, q = omega[order], q[order]
            if np.any(np.diff(omega) == 0):
                raise ValueError("omega contains duplicate rows")
        if omega[0] < 0 or omega[-1] >= op.n_rows:
            raise ValueError("omega index out of range")
        self.op = op
        self.omega = omega
        self.q = q
        self._rows_omega = None
        self._gram_omega = None
        self._atq = None
        self._beta_cache: dict[str, float] = {}

    @property
    def n_cols(self) -> int:
        return self.op.n_cols

    def with_rhs(self, q) -> "LiftedProblem":
        """Same operator and mask with new observed responses; caches carry over."""
        other = LiftedProblem(self.op, self.omega, q)
        other._rows_omega = self._rows_omega
        other._gram_omega = self._gram_omega
        other._beta_cache = self._beta_cache
        return other

    def rows_omega(self) -> np.ndarray:
        if self._rows_omega is None:
            self._rows_omega = self.op.rows(self.omega)
        return self._rows_omega

    def gram_omega(self) -> np.ndarray:
        if self._gram_omega is None:
            r = self.rows_omega()
            self._gram_omega = r.T @ r
        return self._gram_omega

    def atq(self) -> np.ndarray:
        if self._atq is None:
            self._atq = self.rows_omega().T @ self.q
        return self._atq

    def masked_residual(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(self.rows_omega() @ x - self.q))

    def direct_solve(self) -> np.ndarray:
        """Masked normal-equation solution (A_Ωᵀ A_Ω)⁺ A_Ωᵀ q."""
        w, v = np.linalg.eigh(self.gram_omega())
        tol = 1e-12 * max(w.max(initial=0.0), 0.0)
        keep = w > tol
        if np.count_nonzero(keep) < self.n_cols:
            warnings.warn("masked Gram is numerically singular; returned the "
                          "pseudo-inverse solution", RankDeficiencyWarning,
                          stacklevel=2)
        return (v[:, keep] / w[keep]) @ (v[:, keep].T @ self.atq())

    def beta(self, mode: str = "exact") -> float:
        """Spectral factor for this mask, cached per mode."""
        if mode not in self._beta_cache:
            if mode == "heuristic":
                value = 2.0 * self.op.n_rows / self.omega.size
            else:
                value = estimate_beta(self.op, self.omega, mode)
            self._beta_cache[mode] = value
        return self._beta_cache[mode]

    def exact_step(self, x: np.ndarray) -> np.ndarray:
        """One mini-ALS step with an exact inner solve.

        Algebraically x - (AᵀA)⁺ (A_Ωᵀ A_Ω x - A_Ωᵀ q): the imputed
        responses never appear because Aᵀ of the imputed rhs collapses to
        Gram terms.
        """
        rhs = self.atq() + (self.op.gram() - self.gram_omega()) @ x
        return self.op.pinv_gram() @ rhs

    def sampled_step(self, x: np.ndarray, sketch: SketchConfig,
                     rng: np.random.Generator) -> tuple[np.ndarray, int]:
        """One mini-ALS step where the full regression is leverage-sampled.

        The imputed rhs is evaluated lazily: observed sampled rows read q,
        unobserved sampled rows read (A x) at that row only.
        """
        s = sketch.sample_size(self.op.n_cols, self.op.n_rows)
        idx, probs = self.op.leverage().sample(s, rng)
        rows = self.op.rows(idx)
        pos = np.searchsorted(self.omega, idx)
        pos_clip = np.minimum(pos, self.omega.size - 1)
        observed = self.omega[pos_clip] == idx
        f = np.where(observed, self.q[pos_clip], rows @ x)
        w = 1.0 / np.sqrt(s * probs)
        sol, *_ = np.linalg.lstsq(rows * w[:, None], f * w, rcond=1e-12)
        return sol, s


@dataclass(frozen=True)
class RichardsonConfig:
    """Outer-iteration policy for the lifted solves.

    ``epsilon`` budgets the reducible error, ``epsilon_hat`` the inner-solve
    accuracy (must stay below 1/beta^2; None resolves to 0.25/beta^2 once
    beta is known).  ``beta`` is a number or one of "exact", "heuristic",
    "auto".  The iteration count follows :func:`iteration_bound` unless
    ``max_iters`` overrides it; ``stop_tol`` (default off) adds early
    stopping on the relative iterate change.
    """

    epsilon: float = 1e-6
    epsilon_hat: float | None = 0.0
    beta: float | str = "auto"
    max_iters: int | None = None
    stop_tol: float = 0.0
    accelerate: bool = False

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if self.epsilon_hat is not None and not 0.0 <= self.epsilon_hat < 1.0:
            raise ValueError(f"epsilon_hat must be in [0, 1), got {self.epsilon_hat}")
        if isinstance(self.beta, str):
            if self.beta not in ("exact", "heuristic", "auto"):
                raise ValueError(f"unknown beta policy {self.beta!r}")
        else:
            if self.beta < 1.0:
                raise ValueError(f"beta must be >= 1, got {self.beta}")
            if self.epsilon_hat is not None and self.epsilon_hat >= 1.0 / self.beta ** 2:
                raise ValueError(
                    f"epsilon_hat = {self.epsilon_hat} must be below "
                    f"1/beta^2 = {1.0 / self.beta ** 2}")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.stop_tol < 0.0:
            raise ValueError("stop_tol must be non-negative")


@dataclass
class SolveReport:
    """Outcome of a lifted solve, including the per-iteration residual trace."""

    x: np.ndarray
    beta: float
    epsilon_hat: float
    iterations: int
    residuals: np.ndarray = field(repr=False)
    sample_counts: list[int] = field(repr=False)
    wall_ms: float = 0.0


def iteration_bound(beta: float, epsilon: float, epsilon_hat: float) -> int:
    """ceil(log(2 beta / epsilon) / (2 (1/beta - sqrt(epsilon_hat)))).

    Natural logarithm.  The driver loop runs this many steps plus one
    final iterate.
    """
    if beta < 1.0:
        raise ValueError(f"beta must be >= 1, got {beta}")
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")
    if not 0.0 <= epsilon_hat < 1.0 / beta ** 2:
        raise ValueError(
            f"epsilon_hat = {epsilon_hat} must be in [0, 1/beta^2) with "
            f"beta = {beta}")
    gap = 1.0 / beta - math.sqrt(epsilon_hat)
    return math.ceil(math.log(2.0 * beta / epsilon) / (2.0 * gap))


def resolve_beta(prob: LiftedProblem, policy) -> float:
    """Turn a beta policy into a number for the given problem."""
    if not isinstance(policy, str):
        return float(policy)
    if policy == "exact":
        return prob.beta("exact")
    if policy == "heuristic":
        return prob.beta("heuristic")
    if policy == "auto":
        if (prob.n_cols <= _AUTO_EXACT_MAX_COLS
                and prob.op.n_rows <= _AUTO_EXACT_MAX_ROWS):
            try:
                return prob.beta("exact")
            except BetaEstimationError:
                warnings.warn("exact beta unavailable (singular masked Gram); "
                              "falling back to the 2/p heuristic",
                              stacklevel=2)
        return _AUTO_HEURISTIC_SAFETY * prob.beta("heuristic")
    raise ValueError(f"unknown beta policy {policy!r}")


def mini_als_step(prob: LiftedProblem, x_k: np.ndarray, sketch: SketchConfig,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """One impute-and-solve step of mini-ALS from the iterate ``x_k``."""
    x_k = np.asarray(x_k, dtype=np.float64).reshape(-1)
    if x_k.size != prob.n_cols:
        raise ValueError(f"iterate length {x_k.size} != {prob.n_cols} columns")
    if sketch.exact:
        return prob.exact_step(x_k)
    if rng is None:
        rng = np.random.default_rng(sketch.seed)
    x, _ = prob.sampled_step(x_k, sketch, rng)
    return x


def em_one_step(prob: LiftedProblem, x_k: np.ndarray, sketch: SketchConfig,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Single fill-in-and-refit step; identical to :func:`mini_als_step`.

    Exposed under its own name so drivers can select it as the
    one-iteration-per-block baseline strategy.
    """
    return mini_als_step(prob, x_k, sketch, rng)


def _run(prob: LiftedProblem, cfg: RichardsonConfig, sketch: SketchConfig,
         accelerate: bool, x0, inner_solve, rng) -> SolveReport:
    start = time.perf_counter()
    beta = resolve_beta(prob, cfg.beta)
    eps_hat = cfg.epsilon_hat if cfg.epsilon_hat is not None else 0.25 / beta ** 2
    if eps_hat >= 1.0 / beta ** 2:
        raise ValueError(f"epsilon_hat = {eps_hat} must be below 1/beta^2 "
                         f"= {1.0 / beta ** 2} (beta = {beta})")
    step_sketch = replace(sketch, epsilon_hat=eps_hat)
    n_iters = cfg.max_iters if cfg.max_iters is not None \
        else iteration_bound(beta, cfg.epsilon, eps_hat) + 1
    if rng is None:
        rng = np.random.default_rng(sketch.seed)

    x = np.zeros(prob.n_cols) if x0 is None \
        else np.asarray(x0, dtype=np.float64).reshape(-1).copy()
    residuals = [prob.masked_residual(x)]
    sample_counts: list[int] = []
    x_prev = None
    done = 0
    for k in range(1, n_iters + 1):
        if inner_solve is not None:
            x_hat, drew = np.asarray(inner_solve(prob, x), dtype=np.float64), 0
        elif step_sketch.exact:
            x_hat, drew = prob.exact_step(x), 0
        else:
            x_hat, drew = prob.sampled_step(x, step_sketch, rng)
        if accelerate and k % 2 == 0 and x_prev is not None:
            denom = float(np.linalg.norm(x - x_prev))
            alpha = float(np.linalg.norm(x_hat - x)) / denom \
                if denom > _EXTRAPOLATION_FLOOR else math.inf
            if alpha < 1.0:
                x_new = x + (x_hat - x) / (1.0 - alpha)
            else:
                x_new = x_hat  # extrapolation assumes a contracting trajectory
        else:
            x_new = x_hat
        x_prev, x = x, x_new
        residuals.append(prob.masked_residual(x))
        sample_counts.append(drew)
        done = k
        if cfg.stop_tol > 0.0:
            scale = max(float(np.linalg.norm(x)), 1e-300)
            if float(np.linalg.norm(x - x_prev)) / scale <= cfg.stop_tol:
                break
    wall_ms = (time.perf_counter() - start) * 1e3
    return SolveReport(x=x, beta=beta, epsilon_hat=eps_hat, iterations=done,
                       residuals=np.asarray(residuals),
                       sample_counts=sample_counts, wall_ms=wall_ms)


def approx_mini_als(prob: LiftedProblem, cfg: RichardsonConfig,
                    sketch: SketchConfig | None = None, x0=None,
                    inner_solve=None,
                    rng: np.random.Generator | None = None) -> SolveReport:
    """Run mini-ALS from x = 0 for the prescribed iteration count.

    ``inner_solve`` optionally replaces the default inner least-squares
    routine with any callable (problem, iterate) -> new iterate that meets
    the (1 + epsilon_hat) residual contract.
    """
    sketch = sketch if sketch is not None else SketchConfig()
    return _run(prob, cfg, sketch, cfg.accelerate, x0, inner_solve, rng)


def accelerated_mini_als(prob: LiftedProblem, cfg: RichardsonConfig,
                         sketch: SketchConfig | None = None, x0=None,
                         inner_solve=None,
                         rng: np.random.Generator | None = None) -> SolveReport:
    """Mini-ALS with adaptive-step extrapolation on even iterations.

    Odd iterations are plain steps.  An even iteration extrapolates the
    plain proposal by 1 / (1 - alpha) with alpha the ratio of consecutive
    step lengths, falling back to the plain step when alpha >= 1 or the
    previous step is negligible.
    """
    sketch = sketch if sketch is not None else SketchConfig()
    return _run(prob, cfg, sketch, True, x0, inner_solve, rng)
