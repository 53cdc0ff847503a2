import itertools

import numpy as np
import pytest

from tensor_lift.core import (
    CPModel,
    DenseTensor,
    ObservationMask,
    TTModel,
    TuckerModel,
    devectorize,
    fold,
    frobenius_norm,
    inner,
    mode_product,
    reconstruct,
    rre,
    unfold,
    vectorize,
)

import oracles


def test_unfold_matrix_mode0_is_identity():
    m = DenseTensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(unfold(m, 0), m.data)


def test_unfold_2x2x2_matches_enumerated_index_map():
    t = DenseTensor(np.arange(1.0, 9.0).reshape(2, 2, 2))
    got = unfold(t, 0)
    want = oracles.unfold_by_enumeration(t.data, 0)
    assert np.array_equal(got, want)
    # frozen from the enumeration oracle
    assert np.array_equal(got, [[1, 2, 3, 4], [5, 6, 7, 8]])


@pytest.mark.parametrize("shape", [(2, 3), (3, 2, 4), (2, 2, 2, 2), (1, 5, 1)])
def test_unfold_fold_round_trip(shape):
    rng = np.random.default_rng(0)
    t = DenseTensor(rng.standard_normal(shape))
    for mode in range(len(shape)):
        assert np.array_equal(fold(unfold(t, mode), mode, shape).data, t.data)
        assert np.array_equal(unfold(t, mode),
                              oracles.unfold_by_enumeration(t.data, mode))


def test_unfold_mode_out_of_range():
    t = DenseTensor(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        unfold(t, 2)
    with pytest.raises(ValueError):
        unfold(t, -1)


def test_vectorize_trivial_and_identity_matrix():
    assert np.array_equal(vectorize(DenseTensor(np.full((1, 1, 1), 7.0))), [7.0])
    assert np.array_equal(vectorize(DenseTensor(np.eye(2))), [1.0, 0.0, 0.0, 1.0])


def test_vectorize_matches_enumeration_and_round_trips():
    rng = np.random.default_rng(1)
    for shape in [(4,), (2, 3), (2, 3, 2)]:
        t = DenseTensor(rng.standard_normal(shape))
        v = vectorize(t)
        assert np.array_equal(v, oracles.vectorize_by_enumeration(t.data))
        assert np.array_equal(devectorize(v, shape).data, t.data)


def test_index_bijection_exhaustive_small_shapes():
    # all shapes up to 4x4x4x4: vectorize/devectorize and unfold/fold invert
    rng = np.random.default_rng(2)
    for ndim in (1, 2, 3, 4):
        for shape in itertools.product(*([range(1, 5)] * ndim)):
            t = DenseTensor(rng.standard_normal(shape))
            assert np.array_equal(devectorize(vectorize(t), shape).data, t.data)
            mode = rng.integers(ndim)
            assert np.array_equal(fold(unfold(t, mode), mode, shape).data, t.data)


def test_mode_product_identity_and_sums():
    rng = np.random.default_rng(3)
    t = DenseTensor(rng.standard_normal((3, 4, 2)))
    for mode in range(3):
        same = mode_product(t, np.eye(t.shape[mode]), mode)
        assert np.allclose(same.data, t.data)
        ones = mode_product(t, np.ones((1, t.shape[mode])), mode)
        assert np.allclose(ones.data,
                           oracles.mode_product_by_summation(
                               t.data, np.ones((1, t.shape[mode])), mode))
        assert np.allclose(ones.data.squeeze(axis=mode), t.data.sum(axis=mode))


def test_mode_product_composition_same_mode():
    rng = np.random.default_rng(4)
    t = DenseTensor(rng.standard_normal((3, 3, 3)))
    a = rng.standard_normal((3, 3))
    b = rng.standard_normal((3, 3))
    lhs = mode_product(mode_product(t, a, 1), b, 1)
    rhs = mode_product(t, b @ a, 1)
    assert np.allclose(lhs.data, rhs.data, atol=1e-12)


def test_mode_product_commutes_across_distinct_modes():
    rng = np.random.default_rng(5)
    t = DenseTensor(rng.standard_normal((3, 4, 5)))
    a = rng.standard_normal((2, 3))
    b = rng.standard_normal((6, 5))
    lhs = mode_product(mode_product(t, a, 0), b, 2)
    rhs = mode_product(mode_product(t, b, 2), a, 0)
    assert np.allclose(lhs.data, rhs.data, rtol=1e-12)


def test_mode_product_dimension_mismatch():
    t = DenseTensor(np.zeros((3, 4)))
    with pytest.raises(ValueError):
        mode_product(t, np.zeros((2, 5)), 0)


def test_reconstruct_rank1_all_ones_cp():
    model = CPModel([1.0], [np.ones((2, 1)), np.ones((3, 1)), np.ones((2, 1))])
    assert np.allclose(reconstruct(model).data, 1.0)


def test_reconstruct_cp_matches_elementwise():
    rng = np.random.default_rng(6)
    model = CPModel(rng.uniform(size=3),
                    [rng.standard_normal((4, 3)), rng.standard_normal((3, 3))])
    want = oracles.cp_reconstruct_elementwise(model.weights, model.factors)
    assert np.allclose(reconstruct(model).data, want, atol=1e-12)


def test_reconstruct_tucker_identity_factors_returns_core():
    rng = np.random.default_rng(7)
    core = DenseTensor(rng.standard_normal((2, 3, 2)))
    model = TuckerModel(core, [np.eye(2), np.eye(3), np.eye(2)])
    assert np.allclose(reconstruct(model).data, core.data)


def test_reconstruct_tucker_matches_elementwise_and_mode_products():
    rng = np.random.default_rng(8)
    core = DenseTensor(rng.standard_normal((2, 2, 3)))
    factors = [rng.standard_normal((4, 2)), rng.standard_normal((3, 2)),
               rng.standard_normal((5, 3))]
    model = TuckerModel(core, factors)
    got = reconstruct(model)
    assert np.allclose(got.data,
                       oracles.tucker_reconstruct_elementwise(core.data, factors),
                       atol=1e-12)
    step = core
    for mode, f in enumerate(factors):
        step = mode_product(step, f, mode)
    assert np.allclose(got.data, step.data, atol=1e-12)


def test_reconstruct_tt_matches_chain_product():
    rng = np.random.default_rng(9)
    cores = [rng.standard_normal((1, 2, 2)), rng.standard_normal((2, 3, 2)),
             rng.standard_normal((2, 2, 1))]
    model = TTModel(cores)
    assert np.allclose(reconstruct(model).data,
                       oracles.tt_reconstruct_elementwise(cores), atol=1e-12)


def test_inner_is_squared_norm():
    rng = np.random.default_rng(10)
    t = DenseTensor(rng.standard_normal((3, 3)))
    assert inner(t, t) == pytest.approx(frobenius_norm(t) ** 2)


def test_rre_perfect_zero_and_all_zero_candidate():
    rng = np.random.default_rng(11)
    t = DenseTensor(rng.uniform(size=(3, 4)))
    assert rre(t, t) == 0.0
    assert rre(DenseTensor(np.zeros((3, 4))), t) == pytest.approx(1.0)


def test_rre_masked_restricts_both_sides():
    t = DenseTensor([[1.0, 2.0], [3.0, 4.0]])
    xhat = DenseTensor([[1.0, 0.0], [3.0, 0.0]])
    mask = ObservationMask((2, 2), [0, 2])  # entries (0,0) and (1,0)
    assert rre(xhat, t, mask) == 0.0
    assert rre(xhat, t) > 0.0


def test_rre_zero_denominator_reported_not_raised():
    z = DenseTensor(np.zeros((2, 2)))
    assert rre(z, z) == 0.0
    assert rre(DenseTensor(np.ones((2, 2))), z) == float("inf")


def test_rre_accepts_models():
    model = CPModel([1.0], [np.ones((2, 1)), np.ones((2, 1))])
    assert rre(model, DenseTensor(np.ones((2, 2)))) == 0.0


def test_mask_bounds_and_dedup():
    with pytest.raises(ValueError):
        ObservationMask((2, 2), [4])
    m = ObservationMask((2, 2), [1, 1, 3])
    assert np.array_equal(m.linear, [1, 3])


def test_mask_complement_partitions_range():
    m = ObservationMask.random((4, 5), 0.35, seed=0)
    c = m.complement()
    merged = np.sort(np.concatenate([m.linear, c.linear]))
    assert np.array_equal(merged, np.arange(20))


def test_mask_random_count_contract():
    m = ObservationMask.random((10, 10, 10), 0.1, seed=1)
    assert len(m) == 100
    assert len(ObservationMask.random((10,), 1.0, seed=2)) == 10


def test_mask_mode_groups_agree_with_unfolding():
    rng = np.random.default_rng(12)
    shape = (3, 4, 2)
    t = DenseTensor(rng.standard_normal(shape))
    mask = ObservationMask.random(shape, 0.5, seed=3)
    vals = mask.values_from(t)
    for mode in range(3):
        mat = unfold(t, mode)
        for i, (cols, pos) in enumerate(mask.mode_groups(mode)):
            assert np.allclose(mat[i, cols], vals[pos])


def test_mask_degenerate_dimension_is_legal():
    m = ObservationMask.random((1, 6, 1), 0.5, seed=4)
    groups = m.mode_groups(0)
    assert len(groups) == 1


def test_cp_normalized_unit_columns():
    rng = np.random.default_rng(13)
    model = CPModel(np.ones(2), [rng.uniform(size=(4, 2)) for _ in range(3)])
    norm = model.normalized()
    for f in norm.factors:
        assert np.allclose(np.linalg.norm(f, axis=0), 1.0, atol=1e-12)
    assert np.all(norm.weights >= 0)
    assert np.allclose(reconstruct(norm).data, reconstruct(model).data, atol=1e-12)


def test_tt_model_validates_rank_chain():
    with pytest.raises(ValueError):
        TTModel([np.zeros((1, 2, 3)), np.zeros((2, 2, 1))])
    with pytest.raises(ValueError):
        TTModel([np.zeros((2, 2, 1))])


def test_dense_tensor_immutable():
    t = DenseTensor(np.zeros((2, 2)))
    with pytest.raises((ValueError, AttributeError)):
        t.data[0, 0] = 1.0
