import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectrack.errors import GuardError, ParameterError, SpectralCollapseError, ValidationError
from spectrack.spectral import (
    CombinerWeights,
    SpectralParams,
    build_dense_adjacency,
    combine_channels,
    oracle_step,
    rayleigh_quotient,
    refine,
    spectral_iteration,
)
from spectrack.tracking import extract_bbox
from spectrack.volume import l2_norm

R1 = dict(radius_t=1, radius_s=1)


def random_instance(seed, max_t=4, max_hw=8, f_const=False):
    rng = np.random.default_rng(seed)
    T, H, W = (int(v) for v in rng.integers(1, [max_t + 1, max_hw + 1, max_hw + 1]))
    params = SpectralParams(
        alpha=float(rng.choice([0.5, 1.0, 2.0])), p=float(rng.choice([0.5, 1.0, 2.0])), **R1
    )
    s = rng.uniform(0.05, 1.0, (T, H, W))
    f = np.full((T, H, W), rng.random()) if f_const else rng.random((T, H, W))
    x = rng.uniform(0.05, 1.0, (T, H, W))
    return x, s, f, params


# combine_channels

def test_combine_zero_weights_is_half(rng):
    cs = rng.random((3, 2, 4, 4))
    np.testing.assert_array_equal(combine_channels(cs, CombinerWeights([0, 0, 0], 0)), 0.5)


def test_combine_single_voxel():
    out = combine_channels(np.ones((1, 1, 1, 1)), CombinerWeights([2.0], -1.0))
    assert abs(out.item() - 1 / (1 + math.exp(-1))) < 1e-7  # 0.7310585786...


def test_combine_cancellation():
    cs = np.full((2, 2, 3, 3), 0.5)
    np.testing.assert_array_equal(combine_channels(cs, CombinerWeights([1, 1], -1)), 0.5)


def test_combine_channel_mismatch():
    with pytest.raises(ValidationError):
        combine_channels(np.zeros((2, 1, 2, 2)), CombinerWeights([1.0]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 5), st.floats(0.0, 0.5))
def test_combine_monotone_in_positive_channel(seed, w0, bump):
    rng = np.random.default_rng(seed)
    cs = rng.random((3, 1, 3, 3))
    cw = CombinerWeights([w0, rng.normal(), rng.normal()], rng.normal())
    before = combine_channels(cs, cw)
    cs2 = cs.copy()
    cs2[0, 0, 1, 2] += bump
    after = combine_channels(cs2, cw)
    assert after[0, 1, 2] >= before[0, 1, 2]


# spectral_iteration

def test_single_voxel_iteration():
    out = spectral_iteration(np.ones((1, 1, 1)), np.full((1, 1, 1), 0.3), np.full((1, 1, 1), 0.9), SpectralParams())
    np.testing.assert_allclose(out, [[[1.0]]])


def test_two_adjacent_voxels_symmetric():
    v = np.full((1, 1, 2), 0.6)
    out = spectral_iteration(v, v, v, SpectralParams(**R1))
    np.testing.assert_allclose(out.ravel(), [1 / math.sqrt(2)] * 2, rtol=1e-6)


def test_iteration_matches_oracle_random(rng):
    s, f, x = rng.random((3, 3, 4, 4))
    params = SpectralParams(**R1)
    fast = spectral_iteration(x, s, f, params)
    dense = oracle_step(x, build_dense_adjacency(s, f, params))
    assert np.abs(fast - dense).max() < 1e-5


@pytest.mark.parametrize("seed", range(40))
def test_equivalence_three_chained_iterations(seed):
    x, s, f, params = random_instance(seed)
    M = build_dense_adjacency(s, f, params)
    for _ in range(3):
        fast = spectral_iteration(x, s, f, params)
        assert np.abs(fast - oracle_step(x, M)).max() < 1e-5
        assert abs(l2_norm(fast) - 1.0) < 1e-6
        x = fast


def test_equivalence_default_kernel(rng):
    # Radius-3 kernel wider than the volume: dropped taps on both routes.
    s, f, x = rng.random((3, 3, 5, 6))
    params = SpectralParams(alpha=0.7, p=1.5)
    dense = oracle_step(x, build_dense_adjacency(s, f, params))
    assert np.abs(spectral_iteration(x, s, f, params) - dense).max() < 1e-5


def test_mirror_equivariance(rng):
    s, f, x = rng.random((3, 3, 5, 7))
    params = SpectralParams(p=2.0, **R1)
    out = spectral_iteration(x, s, f, params)
    mirrored = spectral_iteration(x[..., ::-1], s[..., ::-1], f[..., ::-1], params)
    np.testing.assert_allclose(mirrored, out[..., ::-1], atol=1e-7)
    flipped_t = spectral_iteration(x[::-1], s[::-1], f[::-1], params)
    np.testing.assert_allclose(flipped_t, out[::-1], atol=1e-7)


def test_collapse_raises():
    z = np.zeros((1, 2, 2))
    with pytest.raises(SpectralCollapseError):
        spectral_iteration(np.ones((1, 2, 2)), z, z, SpectralParams())


# dense adjacency

def test_dense_single_node():
    params = SpectralParams(alpha=2.0, p=1.0)
    s0 = 0.4
    M = build_dense_adjacency(np.full((1, 1, 1), s0), np.full((1, 1, 1), 0.8), params)
    w0 = 1.0 / sum(math.exp(-d * d / 2) for d in range(-3, 4))
    assert abs(M.entries[0, 0] - s0 * s0 * 0.5 * w0 ** 3) < 1e-9


def test_dense_symmetric(rng):
    s, f = rng.random((2, 2, 3, 3))
    M = build_dense_adjacency(s, f, SpectralParams(p=0.5, **R1)).entries
    assert np.abs(M - M.T).max() < 1e-9


def test_dense_support_and_constant_f(rng):
    T, H, W = 2, 3, 4
    s = rng.uniform(0.1, 1, (T, H, W)).astype(np.float32)
    params = SpectralParams(alpha=0.5, **R1)
    M = build_dense_adjacency(s, np.full((T, H, W), 0.3), params).entries
    k = params.kernel
    coords = [(t, y, x) for t in range(T) for y in range(H) for x in range(W)]
    sf = s.ravel().astype(np.float64)
    for i, a in enumerate(coords):
        for j, b in enumerate(coords):
            d = [b[n] - a[n] for n in range(3)]
            if max(abs(v) for v in d) > 1:
                assert M[i, j] == 0
            else:
                expected = 2.0 * sf[i] * sf[j] * k.weight(*d)
                assert M[i, j] > 0 and abs(M[i, j] - expected) < 1e-12


def test_dense_guard():
    v = np.zeros((1, 65, 64))
    with pytest.raises(GuardError):
        build_dense_adjacency(v, v, SpectralParams())


def test_oracle_diagonal_scaling(rng):
    from spectrack.spectral import DenseAdjacency

    x = rng.random((2, 2, 3))
    m = DenseAdjacency(x.shape, 3.7 * np.eye(x.size))
    np.testing.assert_allclose(oracle_step(x, m), x / np.linalg.norm(x), atol=1e-7)


def _leading_eigvec(M):
    vals, vecs = np.linalg.eigh(M)
    return vecs[:, np.argmax(vals)]


@pytest.mark.parametrize("seed", range(5))
def test_power_iteration_reaches_leading_eigenvector(seed):
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.1, 1.0, (2, 4, 4))
    f = np.full_like(s, 0.5)
    params = SpectralParams(p=float(rng.choice([0.5, 1, 2])), **R1)
    M = build_dense_adjacency(s, f, params)
    x = rng.uniform(0.1, 1.0, s.shape)
    for _ in range(200):
        x = oracle_step(x, M)
    v = _leading_eigvec(M.entries)
    assert abs(float(x.ravel().astype(np.float64) @ v)) >= 1 - 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_rayleigh_quotient_non_decreasing(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(int(v) for v in rng.integers(1, [3, 5, 5]))
    s = rng.uniform(0.1, 1.0, shape)
    f = np.full(shape, rng.random())
    params = SpectralParams(alpha=float(rng.choice([0.5, 1, 2])), **R1)
    M = build_dense_adjacency(s, f, params)
    x = rng.uniform(0.1, 1.0, shape)
    prev = rayleigh_quotient(x, M)
    for _ in range(30):
        x = spectral_iteration(x, s, f, params)
        cur = rayleigh_quotient(x, M)
        assert cur >= prev - 1e-7
        prev = cur


# refine

def test_refine_keeps_crisp_blob_box():
    mask = np.zeros((8, 16, 16), dtype=np.float32)
    mask[:, 5:11, 4:9] = 1.0
    out = refine(mask[None], CombinerWeights([1.0]), SpectralParams())
    assert out.min() >= 0 and out.max() <= 1
    for t in range(8):
        assert extract_bbox(out[t]) == extract_bbox(mask[t])


def test_refine_rejects_zero_iterations():
    with pytest.raises(ParameterError):
        SpectralParams(n_iter=0)


def test_refine_degenerate_input_collapses():
    cs = np.zeros((2, 2, 4, 4))
    with pytest.raises(SpectralCollapseError):
        refine(cs, CombinerWeights([0, 0], -20), SpectralParams())


def test_refine_unscaled_is_clamped_eigenvector(rng):
    cs = rng.random((2, 3, 5, 5))
    raw = refine(cs, CombinerWeights([1, 1], -0.5), SpectralParams(), rescale=False)
    assert raw.max() < 0.5  # unit-norm vector spread over 75 voxels
