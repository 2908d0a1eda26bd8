import numpy as np
import pytest

import oracles
from randgen import random_binary_mask, random_features, random_shape, rng_for
from ssmatch.errors import DimMismatchError, EmptyMaskError, ZeroPrototypeError
from ssmatch.tensor_core import (
    MASK_BINARY,
    MASK_PROBABILITY,
    MASK_SCORE,
    ROLE_BACKGROUND,
    AffinityMatrix,
    FeatureMap,
    Mask,
    Prototype,
    PrototypeField,
    column_softmax,
    cosine_field_map,
    cosine_map,
    masked_average_pooling,
    matmul,
    pairwise_softmax,
)


def rel_err(got, want):
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = np.maximum(np.abs(want), 1.0)
    return float(np.max(np.abs(got - want) / denom))


# ---------------------------------------------------------------------------
# container validation


def test_feature_map_requires_3d():
    with pytest.raises(DimMismatchError):
        FeatureMap(np.zeros((4, 4), dtype=np.float32))


def test_feature_map_rejects_nan():
    data = np.zeros((2, 3, 3), dtype=np.float32)
    data[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        FeatureMap(data)


def test_feature_map_is_immutable():
    f = random_features(rng_for(0), 2, 3, 3)
    with pytest.raises(ValueError):
        f.data[0, 0, 0] = 1.0


def test_mask_kind_validation():
    with pytest.raises(ValueError):
        Mask(np.full((2, 2), 0.5, dtype=np.float32), MASK_BINARY)
    with pytest.raises(ValueError):
        Mask(np.full((2, 2), 1.5, dtype=np.float32), MASK_PROBABILITY)
    Mask(np.full((2, 2), -0.7, dtype=np.float32), MASK_SCORE)
    with pytest.raises(ValueError):
        Mask(np.zeros((2, 2), dtype=np.float32), "nonsense")


def test_mask_inverted_and_active():
    m = Mask(np.array([[1, 0], [0, 1]], dtype=np.float32), MASK_BINARY)
    assert m.active_pixels() == 2
    inv = m.inverted()
    assert inv.active_pixels() == 2
    assert np.array_equal(inv.data + m.data, np.ones((2, 2), dtype=np.float32))
    score = Mask(np.zeros((2, 2), dtype=np.float32), MASK_SCORE)
    with pytest.raises(ValueError):
        score.inverted()


def test_prototype_validation():
    with pytest.raises(DimMismatchError):
        Prototype(np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(ValueError):
        Prototype(np.zeros(3, dtype=np.float32), role="sideways")


def test_affinity_matrix_is_float64():
    a = AffinityMatrix(np.ones((2, 3)))
    assert a.data.dtype == np.float64


# ---------------------------------------------------------------------------
# masked average pooling


def test_map_matches_oracle_many_cases():
    for case in range(120):
        rng = rng_for(case, tag=10)
        c, h, w = random_shape(rng)
        f = random_features(rng, c, h, w)
        m = random_binary_mask(rng, h, w, nonempty=True)
        got = masked_average_pooling(f, m)
        want = oracles.naive_map(f.data, m.data)
        assert rel_err(got.values, want) < 1e-5
        assert got.values.dtype == np.float32


def test_map_empty_mask_raises():
    f = random_features(rng_for(1), 2, 3, 3)
    with pytest.raises(EmptyMaskError):
        masked_average_pooling(f, Mask(np.zeros((3, 3), dtype=np.float32)))


def test_map_role_is_carried():
    rng = rng_for(2)
    f = random_features(rng, 2, 3, 3)
    m = random_binary_mask(rng, 3, 3, nonempty=True)
    assert masked_average_pooling(f, m, ROLE_BACKGROUND).role == ROLE_BACKGROUND


def test_map_permutation_invariant():
    for case in range(20):
        rng = rng_for(case, tag=11)
        c, h, w = random_shape(rng)
        f = random_features(rng, c, h, w)
        m = random_binary_mask(rng, h, w, nonempty=True)
        perm = rng.permutation(h * w)
        fp = FeatureMap(f.data.reshape(c, -1)[:, perm].reshape(c, h, w))
        mp = Mask(m.data.reshape(-1)[perm].reshape(h, w), MASK_BINARY)
        a = masked_average_pooling(f, m).values.astype(np.float64)
        b = masked_average_pooling(fp, mp).values.astype(np.float64)
        assert np.allclose(a, b, rtol=1e-6, atol=1e-7)


def test_map_dim_mismatch():
    f = random_features(rng_for(3), 2, 3, 3)
    with pytest.raises(DimMismatchError):
        masked_average_pooling(f, Mask(np.ones((2, 3), dtype=np.float32)))


# ---------------------------------------------------------------------------
# cosine maps


def test_cosine_map_matches_oracle_many_cases():
    for case in range(120):
        rng = rng_for(case, tag=20)
        c, h, w = random_shape(rng)
        f = random_features(rng, c, h, w)
        p = Prototype(rng.standard_normal(c).astype(np.float32) + 0.1)
        got = cosine_map(p, f)
        want = oracles.naive_cosine_map(p.values, f.data)
        assert rel_err(got.data, want) < 1e-5
        assert got.kind == MASK_SCORE


def test_cosine_map_zero_feature_column_is_zero():
    f = FeatureMap(np.zeros((3, 2, 2), dtype=np.float32))
    p = Prototype(np.ones(3, dtype=np.float32))
    assert np.array_equal(cosine_map(p, f).data, np.zeros((2, 2), dtype=np.float32))


def test_cosine_map_zero_prototype_raises():
    f = random_features(rng_for(4), 3, 2, 2)
    with pytest.raises(ZeroPrototypeError):
        cosine_map(Prototype(np.zeros(3, dtype=np.float32)), f)


def test_cosine_map_scale_invariance():
    rng = rng_for(5)
    f = random_features(rng, 4, 5, 5)
    p = rng.standard_normal(4).astype(np.float32) + 0.2
    base = cosine_map(Prototype(p), f).data
    for c in (1e-3, 3.0, 1e4):
        scaled = cosine_map(Prototype((c * p).astype(np.float32)), f).data
        assert np.max(np.abs(scaled - base)) < 1e-6


def test_cosine_map_bounded():
    for case in range(30):
        rng = rng_for(case, tag=21)
        c, h, w = random_shape(rng)
        f = random_features(rng, c, h, w, scale=50.0)
        p = Prototype(f.data[:, 0, 0] + 0.0)  # parallel to one column
        if not p.values.any():
            continue
        vals = cosine_map(p, f).data
        assert vals.max() <= 1.0 and vals.min() >= -1.0


def test_cosine_field_matches_oracle_many_cases():
    for case in range(120):
        rng = rng_for(case, tag=22)
        c, h, w = random_shape(rng)
        f = random_features(rng, c, h, w)
        field = PrototypeField(
            (rng.standard_normal((c, h, w)) + 0.1).astype(np.float32))
        got = cosine_field_map(field, f)
        want = oracles.naive_cosine_field_map(field.values, f.data)
        assert rel_err(got.data, want) < 1e-5


def test_cosine_field_zero_column_raises():
    f = FeatureMap(np.ones((2, 1, 2), dtype=np.float32))
    vals = np.ones((2, 1, 2), dtype=np.float32)
    vals[:, 0, 1] = 0.0
    with pytest.raises(ZeroPrototypeError):
        cosine_field_map(PrototypeField(vals), f)


def test_cosine_vector_and_field_agree_bitwise():
    # a broadcast prototype must produce the identical map either way,
    # otherwise fallback outputs would drift from baseline outputs
    for case in range(20):
        rng = rng_for(case, tag=23)
        c, h, w = random_shape(rng)
        f = random_features(rng, c, h, w)
        p = Prototype(rng.standard_normal(c).astype(np.float32) + 0.1)
        field = PrototypeField(np.broadcast_to(
            p.values[:, None, None], (c, h, w)).astype(np.float32))
        assert np.array_equal(cosine_map(p, f).data, cosine_field_map(field, f).data)


# ---------------------------------------------------------------------------
# pairwise softmax


def test_pairwise_softmax_matches_oracle_many_cases():
    for case in range(120):
        rng = rng_for(case, tag=30)
        h, w = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        fg = Mask(rng.uniform(-1, 1, (h, w)).astype(np.float32), MASK_SCORE)
        bg = Mask(rng.uniform(-1, 1, (h, w)).astype(np.float32), MASK_SCORE)
        t = float(rng.uniform(0.1, 20.0))
        pf, pb = pairwise_softmax(fg, bg, t)
        of, ob = oracles.naive_pairwise_softmax(fg.data, bg.data, t)
        assert rel_err(pf.data, of) < 1e-5
        assert rel_err(pb.data, ob) < 1e-5
        assert pf.kind == MASK_PROBABILITY


def test_pairwise_softmax_is_distribution():
    for case in range(40):
        rng = rng_for(case, tag=31)
        h, w = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        fg = Mask(rng.uniform(-1, 1, (h, w)).astype(np.float32), MASK_SCORE)
        bg = Mask(rng.uniform(-1, 1, (h, w)).astype(np.float32), MASK_SCORE)
        pf, pb = pairwise_softmax(fg, bg)
        total = pf.data.astype(np.float64) + pb.data.astype(np.float64)
        assert np.max(np.abs(total - 1.0)) < 1e-5
        assert pf.data.min() >= 0.0 and pf.data.max() <= 1.0


def test_pairwise_softmax_monotone_in_fg_score():
    rng = rng_for(6)
    fg = rng.uniform(-1, 1, (4, 4)).astype(np.float32)
    bg = rng.uniform(-1, 1, (4, 4)).astype(np.float32)
    base, _ = pairwise_softmax(Mask(fg, MASK_SCORE), Mask(bg, MASK_SCORE))
    bumped = fg.copy()
    bumped[2, 2] += 0.05
    after, _ = pairwise_softmax(Mask(bumped, MASK_SCORE), Mask(bg, MASK_SCORE))
    assert after.data[2, 2] > base.data[2, 2]
    off = np.ones((4, 4), dtype=bool)
    off[2, 2] = False
    assert np.array_equal(after.data[off], base.data[off])


def test_pairwise_softmax_extreme_scores_stable():
    fg = Mask(np.array([[1.0, -1.0]], dtype=np.float32), MASK_SCORE)
    bg = Mask(np.array([[-1.0, 1.0]], dtype=np.float32), MASK_SCORE)
    pf, pb = pairwise_softmax(fg, bg, temperature=500.0)
    assert np.all(np.isfinite(pf.data)) and np.all(np.isfinite(pb.data))
    assert pf.data[0, 0] > 0.999 and pf.data[0, 1] < 0.001


def test_pairwise_softmax_shape_mismatch():
    fg = Mask(np.zeros((2, 2), dtype=np.float32), MASK_SCORE)
    bg = Mask(np.zeros((2, 3), dtype=np.float32), MASK_SCORE)
    with pytest.raises(DimMismatchError):
        pairwise_softmax(fg, bg)


# ---------------------------------------------------------------------------
# matmul / column softmax


def test_matmul_matches_oracle_many_cases():
    for case in range(120):
        rng = rng_for(case, tag=40)
        n, k, m = (int(rng.integers(1, 7)) for _ in range(3))
        a = rng.standard_normal((n, k))
        b = rng.standard_normal((k, m))
        assert rel_err(matmul(a, b), oracles.naive_matmul(a, b)) < 1e-5


def test_matmul_shape_checks():
    with pytest.raises(DimMismatchError):
        matmul(np.zeros((2, 3)), np.zeros((4, 2)))
    with pytest.raises(DimMismatchError):
        matmul(np.zeros(3), np.zeros((3, 2)))


def test_column_softmax_matches_oracle_many_cases():
    for case in range(120):
        rng = rng_for(case, tag=41)
        n, m = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        a = 5.0 * rng.standard_normal((n, m))
        got = column_softmax(a)
        assert rel_err(got, oracles.naive_column_softmax(a)) < 1e-5
        assert np.max(np.abs(got.sum(axis=0) - 1.0)) < 1e-9


def test_column_softmax_large_values_stable():
    a = np.array([[1000.0, -1000.0], [999.0, -999.0]])
    got = column_softmax(a)
    assert np.all(np.isfinite(got))
    assert np.allclose(got.sum(axis=0), 1.0)
