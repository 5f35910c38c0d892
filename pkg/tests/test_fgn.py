import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import davies_harte_reference, toeplitz_cov
from pofbm import fgn
from pofbm.errors import DimensionMismatch, NegativeSpectrum, OddLength
from pofbm.ledger import CostLedger

hursts = st.floats(min_value=0.05, max_value=0.95)


def linear_map(fn, n_in):
    """Columns are the images of the unit vectors; fn must be linear."""
    return np.stack([fn(e) for e in np.eye(n_in)], axis=1)


def test_autocov_lag_zero_and_brownian():
    assert fgn.fgn_autocov(0.3, 0) == 1.0
    np.testing.assert_allclose(fgn.fgn_autocov(0.5, np.arange(1, 6)), 0.0, atol=1e-15)


@given(hursts, st.integers(min_value=0, max_value=11))
def test_eigenvalues_nonnegative_after_clipping(h, level):
    emb = fgn.build_embedding(h, 2**level)
    assert emb.eigenvalues.min() >= 0.0
    assert len(emb.eigenvalues) == 2 ** (level + 1)


def test_negative_spectrum_raises(monkeypatch):
    fake = np.array([1.0, -0.5, 0.2, -0.5])
    monkeypatch.setattr(fgn, "circulant_eigenvalues", lambda h, m: fake)
    with pytest.raises(NegativeSpectrum):
        fgn.build_embedding.__wrapped__(0.31, 2)


def test_tiny_negative_eigenvalues_are_clipped(monkeypatch):
    fake = np.array([1.0, -1e-14, 0.2, -1e-14])
    monkeypatch.setattr(fgn, "circulant_eigenvalues", lambda h, m: fake)
    emb = fgn.build_embedding.__wrapped__(0.31, 2)
    assert emb.eigenvalues.min() == 0.0


@pytest.mark.parametrize("h", [0.2, 0.4, 0.7])
@pytest.mark.parametrize("m", [1, 2, 8, 32])
def test_block_map_matches_reference_packing(h, m, rng):
    emb = fgn.build_embedding(h, m)
    z = rng.standard_normal(2 * m)
    np.testing.assert_allclose(fgn.sample_block(emb, z, 1.0), davies_harte_reference(h, m, z), rtol=0, atol=1e-12)


@pytest.mark.parametrize("h", [0.15, 0.4, 0.85])
@pytest.mark.parametrize("level", [0, 2, 4])
def test_block_map_has_exact_covariance(h, level):
    m = 2**level
    delta = fgn.mesh(level)
    emb = fgn.build_embedding(h, m)
    A = linear_map(lambda z: fgn.sample_block(emb, z, delta), 2 * m)
    np.testing.assert_allclose(A @ A.T, toeplitz_cov(h, m) * delta ** (2 * h), atol=1e-12)


def test_brownian_case_bypasses_the_transform(rng):
    emb = fgn.build_embedding(0.5, 8)
    z = rng.standard_normal((3, 16))
    ledger = CostLedger()
    out = fgn.sample_block(emb, z, 0.125, ledger)
    np.testing.assert_array_equal(out, np.sqrt(0.125) * z[:, :8])
    assert ledger.fft_ops == 0


def test_block_shape_checks():
    emb = fgn.build_embedding(0.4, 4)
    with pytest.raises(DimensionMismatch):
        fgn.sample_block(emb, np.zeros(7), 0.25)
    with pytest.raises(DimensionMismatch):
        fgn.full_path(0.4, np.zeros((2, 7)), 2)


def test_pseudo_path_is_blockwise(rng):
    emb = fgn.build_embedding(0.3, 4)
    blocks = rng.standard_normal((5, 3, 8))
    path = fgn.pseudo_path(emb, blocks, 0.25)
    assert path.shape == (5, 12)
    np.testing.assert_array_equal(path[:, 4:8], fgn.sample_block(emb, blocks[:, 1], 0.25))


@pytest.mark.parametrize("method", fgn.PATH_METHODS)
@pytest.mark.parametrize("h", [0.25, 0.4, 0.75])
def test_full_path_has_fbm_covariance(method, h):
    level, T = 2, 3
    m = 2**level
    delta = fgn.mesh(level)
    A = linear_map(lambda z: fgn.full_path(h, z.reshape(T, 2 * m), level, method=method), T * 2 * m)
    np.testing.assert_allclose(A @ A.T, toeplitz_cov(h, T * m) * delta ** (2 * h), atol=1e-11)


@given(hursts, st.integers(min_value=2, max_value=5), st.integers(min_value=0, max_value=3))
def test_causal_path_depends_only_on_past_blocks(h, T, level):
    m = 2**level
    rng = np.random.default_rng(1)
    blocks = rng.standard_normal((T, 2 * m))
    base = fgn.full_path(h, blocks, level)
    bumped = blocks.copy()
    bumped[-1] += 1.0
    out = fgn.full_path(h, bumped, level)
    np.testing.assert_array_equal(out[: (T - 1) * m], base[: (T - 1) * m])


@given(hursts, st.integers(min_value=0, max_value=5))
def test_single_block_exact_equals_pseudo(h, level):
    m = 2**level
    z = np.random.default_rng(2).standard_normal((1, 2 * m))
    pseudo, exact = fgn.paths(h, z, level)
    np.testing.assert_array_equal(pseudo, exact)


def test_causal_first_block_matches_pseudo(rng):
    z = rng.standard_normal((4, 6, 16))
    pseudo, exact = fgn.paths(0.4, z, 3)
    np.testing.assert_allclose(exact[:, :8], pseudo[:, :8], atol=1e-13)
    assert not np.allclose(exact[:, 8:], pseudo[:, 8:])


def test_coarsened_exact_path_is_coarse_fbm():
    h, level, T = 0.4, 3, 2
    m = 2**level
    A = linear_map(lambda z: fgn.coarsen(fgn.full_path(h, z.reshape(T, 2 * m), level)), T * 2 * m)
    target = toeplitz_cov(h, T * m // 2) * fgn.mesh(level - 1) ** (2 * h)
    np.testing.assert_allclose(A @ A.T, target, atol=1e-12)


def test_coarsen_pairs_and_odd_length():
    np.testing.assert_array_equal(fgn.coarsen(np.arange(6.0)), [1.0, 5.0, 9.0])
    with pytest.raises(OddLength):
        fgn.coarsen(np.ones(5))


def test_ledger_counts_block_and_path_work(rng):
    ledger = CostLedger()
    z = rng.standard_normal((10, 4, 16))
    fgn.paths(0.4, z, 3, ledger=ledger)
    n = 4 * 8
    assert ledger.fft_ops == pytest.approx(40 * 16 * 4 + 10 * 2 * n * np.log2(2 * n))
    assert ledger.dense_ops == 10 * n * (n + 1) / 2


def test_empirical_autocov_small(rng):
    mean, se = fgn.empirical_autocov(0.3, 64, 4000, rng, max_lag=3)
    exact = fgn.fgn_autocov(0.3, np.arange(4))
    assert np.all(np.abs(mean - exact) < 4 * se)
