"""Exact fractional Gaussian noise on dyadic grids.

Two linear maps turn standard normals into fBM increments:

* the per-unit-interval block map (circulant embedding, 2m normals -> m
  increments), whose concatenation over t = 1..T gives *pseudo* increments
  that are exact inside each unit interval but independent across them;
* the full-path map, which returns a genuine fBM skeleton on [0, T].

All sampling functions are pure in (embedding, noise) and broadcast over
leading axes, so a whole particle population is mapped in one call.

Packing convention of the block map (fixed, regression tested): for an
embedding of size m with circulant eigenvalues lam[0..2m-1],

    v[0]  = sqrt(lam[0] / 2m) * z[0]
    v[m]  = sqrt(lam[m] / 2m) * z[1]
    v[k]  = sqrt(lam[k] / 4m) * (z[2k] + 1j * z[2k+1]),   k = 1..m-1

and the increments are the first m entries of the Hermitian inverse real
transform ``2m * irfft(v, 2m)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NegativeSpectrum, OddLength

TOL_EIG = 1e-12

_CAUSAL = "causal"
_CIRCULANT = "circulant"
PATH_METHODS = (_CAUSAL, _CIRCULANT)


def mesh(level: int) -> float:
    return 2.0 ** (-level)


def steps_per_unit(level: int) -> int:
    return 1 << level


def check_hurst(h: float) -> float:
    h = float(h)
    if not 0.0 < h < 1.0:
        raise ValueError(f"Hurst parameter must lie in (0, 1), got {h}")
    return h


def fgn_autocov(h, k):
    """Autocovariance of unit-variance fGN at integer lag ``k``."""
    k = np.abs(np.asarray(k, dtype=float))
    out = 0.5 * (np.abs(k + 1) ** (2 * h) - 2 * k ** (2 * h) + np.abs(k - 1) ** (2 * h))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class SpectralEmbedding:
    hurst: float
    m: int
    eigenvalues: np.ndarray

    @cached_property
    def _scales(self):
        m, lam = self.m, self.eigenvalues
        real = np.sqrt(lam[: m + 1] / (4 * m))
        real[0] = np.sqrt(lam[0] / (2 * m))
        real[m] = np.sqrt(lam[m] / (2 * m))
        return real

    @property
    def special(self) -> bool:
        # H = 1/2 bypasses the spectral map (direct increments).
        return self.hurst == 0.5


def circulant_eigenvalues(h: float, m: int) -> np.ndarray:
    """Unclipped eigenvalues of the ``2m`` circulant embedding."""
    h = check_hurst(h)
    m = int(m)
    if m < 1:
        raise ValueError("grid size must be positive")
    gam = fgn_autocov(h, np.arange(m + 1))
    row = np.concatenate([gam, gam[-2:0:-1]])
    return np.fft.fft(row).real


@lru_cache(maxsize=64)
def build_embedding(h: float, m: int, tol: float = TOL_EIG) -> SpectralEmbedding:
    """Circulant spectrum for ``m`` unit-lag fGN increments.

    Negative eigenvalues within ``tol * max(eigenvalue)`` are clipped to zero;
    anything more negative raises ``NegativeSpectrum``.
    """
    h = check_hurst(h)
    m = int(m)
    eig = circulant_eigenvalues(h, m)
    floor = -tol * eig.max()
    if eig.min() < floor:
        raise NegativeSpectrum(f"eigenvalue {eig.min():.3e} below -{tol:g}*max for H={h}, m={m}")
    eig = np.clip(eig, 0.0, None)
    eig.setflags(write=False)
    return SpectralEmbedding(hurst=h, m=m, eigenvalues=eig)


def _spectral_map(emb: SpectralEmbedding, z: np.ndarray) -> np.ndarray:
    m = emb.m
    scale = emb._scales
    v = np.zeros(z.shape[:-1] + (m + 1,), dtype=complex)
    v.real[..., :m] = z[..., 0::2]
    v.real[..., m] = z[..., 1]
    v.imag[..., 1:m] = z[..., 3::2]
    v *= scale
    return np.fft.irfft(v, n=2 * m, axis=-1)[..., :m] * (2 * m)


def sample_block(emb: SpectralEmbedding, z, delta: float, ledger=None) -> np.ndarray:
    """Map ``(..., 2m)`` normals to ``(..., m)`` fBM increments at mesh ``delta``."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != 2 * emb.m:
        raise DimensionMismatch(f"expected {2 * emb.m} normals per block, got {z.shape[-1]}")
    if emb.special:
        return np.sqrt(delta) * z[..., : emb.m]
    if ledger is not None:
        ledger.add_fft(2 * emb.m, int(np.prod(z.shape[:-1])))
    return _spectral_map(emb, z) * delta**emb.hurst


def pseudo_path(emb: SpectralEmbedding, blocks, delta: float, ledger=None) -> np.ndarray:
    """Blockwise increments for ``(..., T, 2m)`` noise, flattened to ``(..., T*m)``."""
    blocks = np.asarray(blocks, dtype=float)
    if blocks.ndim < 2:
        raise DimensionMismatch("blocks must have shape (..., T, 2m)")
    out = sample_block(emb, blocks, delta, ledger)
    return out.reshape(out.shape[:-2] + (-1,))


@lru_cache(maxsize=4)
def causal_factor(h: float, m: int, n_blocks: int) -> np.ndarray:
    """Lower-triangular map taking unit-scale pseudo increments to exact fGN.

    With ``L`` the Cholesky factor of the ``(T m) x (T m)`` fGN Toeplitz
    covariance and ``L1`` that of one block, the map is ``L (I_T kron L1^-1)``.
    Its leading m x m block is the identity, so the first unit interval of
    the exact path coincides with the pseudo path, and block t depends only on
    noise blocks 1..t.
    """
    n = m * n_blocks
    full = np.linalg.cholesky(scipy.linalg.toeplitz(fgn_autocov(h, np.arange(n))))
    first_inv = scipy.linalg.solve_triangular(full[:m, :m], np.eye(m), lower=True)
    out = (full.reshape(n, n_blocks, m) @ first_inv).reshape(n, n)
    out = np.tril(out)
    out.setflags(write=False)
    return out


def _as_blocks(blocks, m):
    blocks = np.asarray(blocks, dtype=float)
    if blocks.ndim < 2 or blocks.shape[-1] != 2 * m:
        raise DimensionMismatch(f"blocks must have shape (..., T, {2 * m})")
    return blocks


def full_path(h: float, blocks, level: int, method: str = _CAUSAL, ledger=None) -> np.ndarray:
    """Exact fBM increments over [0, T] from ``(..., T, 2m)`` noise blocks.

    ``method="causal"`` (default) pushes the pseudo increments through
    :func:`causal_factor`; the path on [0, t] then depends on blocks 1..t only.
    ``method="circulant"`` concatenates the blocks into one ``2 T m`` normal
    vector and applies the circulant map of grid size ``T m``.
    Both return a ``(..., T*m)`` array with the fBM covariance.
    """
    h = check_hurst(h)
    m = steps_per_unit(level)
    delta = mesh(level)
    blocks = _as_blocks(blocks, m)
    n_blocks = blocks.shape[-2]
    lead = blocks.shape[:-2]
    if h == 0.5:
        return np.sqrt(delta) * blocks[..., :m].reshape(lead + (-1,))
    if method == _CIRCULANT:
        n = n_blocks * m
        count = int(np.prod(lead))
        emb = build_embedding(h, n)
        if ledger is not None:
            ledger.add_fft(2 * n, count)
        return _spectral_map(emb, blocks.reshape(lead + (2 * n,))) * delta**h
    if method != _CAUSAL:
        raise ValueError(f"unknown path method {method!r}")
    return paths(h, blocks, level, method=method, ledger=ledger)[1]


def empirical_autocov(h: float, m: int, n_blocks: int, rng, max_lag: int = 5, chunk: int = 500):
    """Mean and standard error of lag products over independent sampled blocks.

    Each block contributes ``mean_i x_i x_{i+k}``; blocks are i.i.d. so the
    standard error is the across-block standard deviation over ``sqrt(n)``.
    """
    emb = build_embedding(h, m)
    stats = []
    left = n_blocks
    while left > 0:
        n = min(chunk, left)
        x = sample_block(emb, rng.standard_normal((n, 2 * m)), 1.0)
        stats.append(np.stack([np.mean(x[:, : m - k] * x[:, k:], axis=1) for k in range(max_lag + 1)], axis=1))
        left -= n
    stats = np.concatenate(stats)
    return stats.mean(axis=0), stats.std(axis=0, ddof=1) / np.sqrt(n_blocks)


def coarsen(fine) -> np.ndarray:
    """Sum consecutive pairs of increments along the last axis."""
    fine = np.asarray(fine, dtype=float)
    if fine.shape[-1] % 2:
        raise OddLength(f"cannot coarsen {fine.shape[-1]} increments")
    return fine[..., 0::2] + fine[..., 1::2]


def paths(h: float, blocks, level: int, method: str = _CAUSAL, ledger=None):
    """``(pseudo, exact)`` increments for the same noise, sharing the block transforms."""
    h = check_hurst(h)
    m = steps_per_unit(level)
    blocks = _as_blocks(blocks, m)
    if method != _CAUSAL or h == 0.5:
        pseudo = pseudo_path(build_embedding(h, m), blocks, mesh(level), ledger)
        return pseudo, full_path(h, blocks, level, method=method, ledger=ledger)
    delta = mesh(level)
    lead = blocks.shape[:-2]
    n_blocks = blocks.shape[-2]
    n = n_blocks * m
    unit = _spectral_map(build_embedding(h, m), blocks).reshape(lead + (n,))
    if ledger is not None:
        count = int(np.prod(lead))
        ledger.add_fft(2 * m, count * n_blocks)
        if n_blocks > 1:
            # nominal full-path transform plus the dense work actually done
            ledger.add_fft(2 * n, count)
            ledger.add_dense(count * n * (n + 1) / 2)
    exact = unit if n_blocks == 1 else unit @ causal_factor(h, m, n_blocks).T
    return unit * delta**h, exact * delta**h
