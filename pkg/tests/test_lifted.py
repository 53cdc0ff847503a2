import numpy as np
import pytest

from tensor_lift.lifted import (
    LiftedProblem,
    RichardsonConfig,
    accelerated_mini_als,
    approx_mini_als,
    em_one_step,
    iteration_bound,
    mini_als_step,
)
from tensor_lift.operators import DenseOperator, SketchConfig

import oracles


def _instance(seed, n_rows=30, n_cols=3, n_obs=20):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n_rows, n_cols))
    omega = np.sort(rng.choice(n_rows, size=n_obs, replace=False))
    q = rng.standard_normal(n_obs)
    return a, omega, q


def _problem(a, omega, q):
    return LiftedProblem(DenseOperator(a), omega, q)


def test_iteration_bound_frozen_values():
    # direct evaluation of ceil(log(2 beta / eps) / (2 (1/beta - sqrt(eps_hat))))
    assert iteration_bound(1.0, 0.01, 0.0) == 3
    assert iteration_bound(2.0, 0.01, 0.0) == 6


def test_iteration_bound_rejects_bad_epsilon_hat():
    with pytest.raises(ValueError):
        iteration_bound(2.0, 0.01, 0.25)  # eps_hat == 1/beta^2
    with pytest.raises(ValueError):
        iteration_bound(2.0, 0.01, 0.3)
    with pytest.raises(ValueError):
        RichardsonConfig(epsilon=0.01, epsilon_hat=0.25, beta=2.0)


def test_iteration_bound_grows_as_epsilon_hat_approaches_limit():
    b1 = iteration_bound(2.0, 0.01, 0.0)
    b2 = iteration_bound(2.0, 0.01, 0.2499)
    assert b2 > 50 * b1


def test_mini_als_step_full_observation_is_exact_solve():
    a, _, _ = _instance(0)
    rng = np.random.default_rng(1)
    q = rng.standard_normal(30)
    prob = _problem(a, np.arange(30), q)
    x1 = mini_als_step(prob, np.zeros(3), SketchConfig())
    assert np.allclose(x1, oracles.masked_lstsq(a, np.arange(30), q), atol=1e-10)


def test_mini_als_step_fixed_point():
    a, omega, q = _instance(2)
    prob = _problem(a, omega, q)
    x_star = oracles.masked_lstsq(a, omega, q)
    x_next = mini_als_step(prob, x_star, SketchConfig())
    assert np.allclose(x_next, x_star, atol=1e-12)


def test_mini_als_step_matches_explicit_richardson_update():
    a, omega, q = _instance(3)
    prob = _problem(a, omega, q)
    rng = np.random.default_rng(4)
    x = rng.standard_normal(3)
    got = mini_als_step(prob, x, SketchConfig())
    want = oracles.richardson_iterates(a, omega, q, 1, x0=x)[1]
    assert np.allclose(got, want, atol=1e-12)


def test_richardson_equivalence_over_iterations():
    # iterate-by-iterate agreement with the explicit preconditioned update
    for seed in range(50):
        a, omega, q = _instance(seed, n_rows=25, n_cols=3, n_obs=17)
        prob = _problem(a, omega, q)
        want = oracles.richardson_iterates(a, omega, q, 20)
        x = np.zeros(3)
        for k in range(20):
            x = mini_als_step(prob, x, SketchConfig())
            assert np.allclose(x, want[k + 1], atol=1e-10)


def test_contraction_rate_in_gram_norm():
    for seed in range(50):
        a, omega, q = _instance(seed + 100, n_rows=24, n_cols=3, n_obs=16)
        prob = _problem(a, omega, q)
        beta = prob.beta("exact")
        g = a.T @ a
        x_star = oracles.masked_lstsq(a, omega, q)
        x = np.zeros(3)
        for _ in range(12):
            x_next = mini_als_step(prob, x, SketchConfig())
            before = np.sqrt((x - x_star) @ g @ (x - x_star))
            after = np.sqrt((x_next - x_star) @ g @ (x_next - x_star))
            assert after <= (1.0 - 1.0 / beta) * before + 1e-10
            x = x_next


def test_lifting_preserves_masked_optimum():
    # solving the lifted problem jointly over (x, b_unobserved) returns the
    # masked solution, and the two optimal values agree
    for seed in range(20):
        a, omega, q = _instance(seed + 300)
        comp = np.setdiff1d(np.arange(30), omega)
        stacked = np.hstack([a, np.zeros((30, len(comp)))])
        for j, row in enumerate(comp):
            stacked[row, 3 + j] = -1.0
        q_tilde = np.zeros(30)
        q_tilde[omega] = q
        joint, *_ = np.linalg.lstsq(stacked, q_tilde, rcond=None)
        x_masked = oracles.masked_lstsq(a, omega, q)
        assert np.allclose(joint[:3], x_masked, atol=1e-8)
        lifted_val = np.linalg.norm(stacked @ joint - q_tilde)
        masked_val = np.linalg.norm(a[omega] @ x_masked - q)
        assert lifted_val == pytest.approx(masked_val, abs=1e-8)


def test_lifted_structure_by_materialization():
    # the zero-masked pair satisfies (P - A) zero on omega, the orthogonality
    # (P - A)ᵀ [P q] = 0, and PᵀP = A_Ωᵀ A_Ω
    for seed in range(10):
        a, omega, q = _instance(seed + 400)
        prob = _problem(a, omega, q)
        p_tilde = np.zeros_like(a)
        p_tilde[omega] = a[omega]
        q_tilde = np.zeros(a.shape[0])
        q_tilde[omega] = q
        diff = p_tilde - a
        assert np.allclose(diff[omega], 0.0)
        stacked = np.column_stack([p_tilde, q_tilde])
        assert np.allclose(diff.T @ stacked, 0.0, atol=1e-12)
        assert np.allclose(p_tilde.T @ p_tilde, prob.gram_omega(), atol=1e-12)


def test_masked_residual_monotone_under_exact_steps():
    for seed in range(20):
        a, omega, q = _instance(seed + 500)
        prob = _problem(a, omega, q)
        x = np.zeros(3)
        prev = prob.masked_residual(x)
        for _ in range(15):
            x = mini_als_step(prob, x, SketchConfig())
            cur = prob.masked_residual(x)
            assert cur <= prev + 1e-12
            prev = cur


def _compliant_adversary(eps_hat):
    """Inner solver achieving exactly (1 + eps_hat) times the optimal residual."""

    def inner(prob, x_k):
        a = prob.op.materialize()
        f = np.zeros(a.shape[0])
        f[prob.omega] = prob.q
        comp = np.setdiff1d(np.arange(a.shape[0]), prob.omega)
        f[comp] = a[comp] @ x_k
        x_hat, *_ = np.linalg.lstsq(a, f, rcond=None)
        best = np.linalg.norm(a @ x_hat - f)
        if eps_hat == 0.0 or best == 0.0:
            return x_hat
        direction = np.zeros(a.shape[1])
        direction[0] = 1.0
        scale = np.sqrt(eps_hat) * best / np.linalg.norm(a @ direction)
        return x_hat + scale * direction

    return inner


@pytest.mark.parametrize("eps_hat_frac", [0.0, 0.5])
def test_approximate_solve_residual_bound(eps_hat_frac):
    # final masked residual obeys the lifted convergence bound, checked with
    # dense projector oracles; the inner solver is a worst-case compliant
    # adversary so the check is deterministic
    violations = 0
    for seed in range(100):
        a, omega, q = _instance(seed, n_rows=26, n_cols=3, n_obs=18)
        prob = _problem(a, omega, q)
        beta = prob.beta("exact")
        eps_hat = eps_hat_frac / beta ** 2
        eps = 1e-3
        cfg = RichardsonConfig(epsilon=eps, epsilon_hat=eps_hat, beta=beta)
        report = approx_mini_als(prob, cfg,
                                 inner_solve=_compliant_adversary(eps_hat))
        p_tilde = np.zeros_like(a)
        p_tilde[omega] = a[omega]
        q_tilde = np.zeros(26)
        q_tilde[omega] = q
        lhs = np.linalg.norm(p_tilde @ report.x - q_tilde) ** 2
        x_star = oracles.masked_lstsq(a, omega, q)
        min_val = np.linalg.norm(p_tilde @ x_star - q_tilde) ** 2
        proj = oracles.projector(p_tilde)
        reducible = np.linalg.norm(proj @ q_tilde) ** 2
        gap = 1.0 / beta - np.sqrt(eps_hat)
        rhs = (1.0 + 2.0 * eps_hat / gap ** 2) * min_val + eps * reducible
        if lhs > rhs * (1 + 1e-9):
            violations += 1
    assert violations == 0


def test_consistent_system_reaches_reducible_error_budget():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((40, 4))
    omega = np.sort(rng.choice(40, size=25, replace=False))
    q = a[omega] @ rng.standard_normal(4)  # consistent on the mask
    prob = _problem(a, omega, q)
    eps = 1e-6
    report = approx_mini_als(prob, RichardsonConfig(epsilon=eps, beta="exact"))
    assert report.residuals[-1] ** 2 <= eps * np.linalg.norm(q) ** 2


def test_full_observation_converges_in_one_effective_iteration():
    a, _, _ = _instance(8)
    rng = np.random.default_rng(9)
    q = rng.standard_normal(30)
    prob = _problem(a, np.arange(30), q)
    report = approx_mini_als(prob, RichardsonConfig(epsilon=0.5, beta="exact"))
    assert report.beta == pytest.approx(1.0, abs=1e-10)
    x_star = oracles.masked_lstsq(a, np.arange(30), q)
    # first iterate already optimal
    assert report.residuals[1] == pytest.approx(
        float(np.linalg.norm(a @ x_star - q)), abs=1e-10)


def test_approx_mini_als_matches_dense_oracle_in_gram_norm():
    rng = np.random.default_rng(10)
    a = rng.standard_normal((40, 4))
    omega = np.sort(rng.choice(40, size=28, replace=False))
    q = rng.standard_normal(28)
    prob = _problem(a, omega, q)
    report = approx_mini_als(prob, RichardsonConfig(epsilon=1e-3, beta="exact"))
    x_star = oracles.masked_lstsq(a, omega, q)
    gp = a[omega].T @ a[omega]
    err = np.sqrt((report.x - x_star) @ gp @ (report.x - x_star))
    ref = np.sqrt(x_star @ gp @ x_star)
    assert err <= 1e-2 * ref


def test_report_residual_trace_recorded_every_iteration():
    a, omega, q = _instance(11)
    prob = _problem(a, omega, q)
    report = approx_mini_als(prob, RichardsonConfig(epsilon=1e-4, beta="exact"))
    assert len(report.residuals) == report.iterations + 1
    assert len(report.sample_counts) == report.iterations


def test_solver_deterministic_given_seed():
    rng = np.random.default_rng(12)
    a = rng.standard_normal((60, 3))
    omega = np.sort(rng.choice(60, size=40, replace=False))
    q = rng.standard_normal(40)
    prob = _problem(a, omega, q)
    beta = prob.beta("exact")
    cfg = RichardsonConfig(epsilon=1e-3, epsilon_hat=0.5 / beta ** 2, beta=beta)
    sketch = SketchConfig(epsilon_hat=0.5, delta=0.5, sample_count=30, seed=77)
    r1 = approx_mini_als(prob, cfg, sketch)
    r2 = approx_mini_als(prob, cfg, sketch)
    assert np.array_equal(r1.x, r2.x)
    assert np.array_equal(r1.residuals, r2.residuals)


def test_warm_start_option():
    a, omega, q = _instance(13)
    prob = _problem(a, omega, q)
    x_star = oracles.masked_lstsq(a, omega, q)
    report = approx_mini_als(prob, RichardsonConfig(epsilon=0.5, beta="exact",
                                                    max_iters=1), x0=x_star)
    assert np.allclose(report.x, x_star, atol=1e-10)


def test_stop_tol_halts_early():
    a, omega, q = _instance(14)
    prob = _problem(a, omega, q)
    full = approx_mini_als(prob, RichardsonConfig(epsilon=1e-10, beta="exact"))
    stopped = approx_mini_als(prob, RichardsonConfig(epsilon=1e-10, beta="exact",
                                                     stop_tol=1e-3))
    assert stopped.iterations < full.iterations


def test_em_one_step_identical_to_mini_als_step():
    a, omega, q = _instance(15)
    prob = _problem(a, omega, q)
    rng = np.random.default_rng(16)
    x = rng.standard_normal(3)
    assert np.array_equal(em_one_step(prob, x, SketchConfig()),
                          mini_als_step(prob, x, SketchConfig()))


def test_em_full_observation_is_direct_solve():
    a, _, _ = _instance(17)
    rng = np.random.default_rng(18)
    q = rng.standard_normal(30)
    prob = _problem(a, np.arange(30), q)
    x = em_one_step(prob, np.zeros(3), SketchConfig())
    assert np.allclose(x, oracles.masked_lstsq(a, np.arange(30), q), atol=1e-10)


def test_single_em_step_trails_converged_mini_als():
    # one imputation step from the same start loses to running the lifted
    # iterations to convergence, on nearly every seed
    wins = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((30, 3))
        omega = np.sort(rng.choice(30, size=12, replace=False))
        q = rng.standard_normal(12)
        prob = _problem(a, omega, q)
        x0 = rng.standard_normal(3)
        em_x = em_one_step(prob, x0, SketchConfig())
        rep = approx_mini_als(prob, RichardsonConfig(epsilon=1e-10, beta="exact"),
                              x0=x0)
        if prob.masked_residual(em_x) > prob.masked_residual(rep.x) - 1e-12:
            wins += 1
    assert wins >= 95


def test_accelerated_alpha_zero_equals_plain_step():
    # when the plain proposal equals the previous iterate the extrapolation
    # multiplier is 1/(1-0) and the step is unchanged
    a, omega, q = _instance(19)
    prob = _problem(a, omega, q)
    x_star = oracles.masked_lstsq(a, omega, q)
    rep = accelerated_mini_als(prob, RichardsonConfig(epsilon=0.5, beta="exact",
                                                      max_iters=4), x0=x_star)
    assert np.allclose(rep.x, x_star, atol=1e-10)


def test_one_variable_problem_solved_in_two_accelerated_iterations():
    rng = np.random.default_rng(20)
    a = rng.standard_normal((6, 1))
    omega = np.arange(5)  # exactly one unobserved row
    q = rng.standard_normal(5)
    prob = _problem(a, omega, q)
    x_star = oracles.masked_lstsq(a, omega, q)
    rep = accelerated_mini_als(prob, RichardsonConfig(epsilon=0.5, beta="exact",
                                                      max_iters=2))
    assert abs(rep.x[0] - x_star[0]) <= 1e-10


def test_accelerated_no_slower_than_plain_at_equal_accuracy():
    # paired runs, fixed seeds, sparse masks where contraction is slow
    for seed in range(10):
        rng = np.random.default_rng(seed + 700)
        a = rng.uniform(size=(80, 3))
        omega = np.sort(rng.choice(80, size=12, replace=False))
        q = a[omega] @ rng.standard_normal(3) + 0.01 * rng.standard_normal(12)
        prob = _problem(a, omega, q)
        target = None
        plain = approx_mini_als(prob, RichardsonConfig(epsilon=1e-8, beta="exact"))
        target = plain.residuals[-1]
        accel = accelerated_mini_als(prob, RichardsonConfig(epsilon=1e-8,
                                                            beta="exact"))
        reached = np.nonzero(accel.residuals <= target * (1 + 1e-9))[0]
        assert reached.size > 0
        assert reached[0] <= plain.iterations


def test_sampled_steps_converge_on_consistent_data():
    rng = np.random.default_rng(21)
    a = rng.standard_normal((400, 4))
    omega = np.sort(rng.choice(400, size=240, replace=False))
    q = a[omega] @ rng.standard_normal(4)
    prob = _problem(a, omega, q)
    beta = prob.beta("exact")
    cfg = RichardsonConfig(epsilon=1e-6, epsilon_hat=0.5 / beta ** 2, beta=beta)
    sketch = SketchConfig(epsilon_hat=0.5, delta=0.3, sample_count=120, seed=3)
    report = approx_mini_als(prob, cfg, sketch)
    assert report.residuals[-1] <= 1e-4 * np.linalg.norm(q)
    assert all(c == 120 for c in report.sample_counts)
