"""Bootstrap particle filters over unit-interval noise blocks.

Each particle owns one ``2m``-vector of standard normals per unit time.  The
single-level filter propagates states with the blockwise (pseudo) increment
map, which keeps the state Markov in unit time, so states are carried
forward instead of being recomputed from ``x0``.  The coupled filter
propagates a fine state and a coarse state from the same block and weights by
the larger of the two observation densities.

Noise history is stored as a pool of per-time arrays plus parent indices; a
trajectory is recovered by walking the ancestry backwards.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import fgn
from .errors import DegenerateWeights, NonFiniteState
from .ledger import CostLedger
from .sde import ModelSpec, affine_unit_terms, unit_map


def normalise_log_weights(logw) -> np.ndarray:
    logw = np.asarray(logw, dtype=float)
    top = np.max(logw)
    if not np.isfinite(top):
        raise DegenerateWeights("all particle weights vanished")
    w = np.exp(logw - top)
    return w / w.sum()


def resample_multinomial(weights, rng, n=None) -> np.ndarray:
    """Draw ``n`` (default ``len(weights)``) i.i.d. indices with the given probabilities."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not np.isfinite(total) or total <= 0 or np.any(w < 0):
        raise DegenerateWeights("weights must be nonnegative with positive finite mass")
    n = len(w) if n is None else n
    cdf = np.cumsum(w / total)
    cdf[-1] = 1.0
    return np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), len(w) - 1)


def _resample(w, rng):
    # normalised, validated weights
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(len(w)), side="right")


def ess(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return 1.0 / np.sum(w**2)


@dataclass
class ParticleSystem:
    """Block pool and ancestry accumulated during one filter pass."""

    pool: np.ndarray  # (T, N, 2m)
    parents: list
    log_weights: Optional[np.ndarray] = None

    @property
    def n_particles(self) -> int:
        return self.pool[0].shape[0]

    @property
    def T(self) -> int:
        return len(self.pool)


@dataclass
class FilterOutput:
    log_norm_const: float
    noise: np.ndarray
    ess: np.ndarray
    log_weight_spread: np.ndarray
    system: Optional[ParticleSystem] = None


def trace_trajectory(system: ParticleSystem, weights, rng) -> np.ndarray:
    """Pick one particle by ``weights`` and return its ancestral ``(T, 2m)`` noise."""
    j = int(resample_multinomial(weights, rng, 1)[0])
    T = system.T
    out = np.empty((T,) + system.pool[0].shape[1:])
    for t in range(T - 1, -1, -1):
        out[t] = system.pool[t][j]
        if t > 0:
            j = int(system.parents[t][j])
    return out


def _run_filter(model, theta, level, n_particles, y, rng, coupled, ledger, adaptive, ess_threshold, keep_system):
    if n_particles < 1:
        raise ValueError("need at least one particle")
    y = np.asarray(y, dtype=float)
    T = len(y)
    if T < 1:
        raise ValueError("need at least one observation")
    theta = np.asarray(theta, dtype=float)
    m = fgn.steps_per_unit(level)
    delta = fgn.mesh(level)
    emb = fgn.build_embedding(model.hurst, m)
    ledger = ledger if ledger is not None else CostLedger()

    x0 = model.initial_state(theta)
    x = np.full(n_particles, x0, dtype=float)
    xc = x.copy() if coupled else None
    # Fresh blocks do not depend on the particle states, so all T x N blocks
    # are drawn and transformed up front.
    pool = rng.standard_normal((T, n_particles, 2 * m))
    incr = fgn.sample_block(emb, pool, delta, ledger)
    ledger.add_euler(T * n_particles * (m + (m // 2 if coupled else 0)))
    fast = model.affine is not None
    if fast:
        gain, drive = affine_unit_terms(model, theta, incr, delta)
        if coupled:
            gain_c, drive_c = affine_unit_terms(model, theta, fgn.coarsen(incr), 2 * delta)
    parents = [np.arange(n_particles)]
    prev = np.full(n_particles, -np.log(n_particles))
    log_c = 0.0
    ess_hist = np.empty(T)
    spread = np.empty(T)
    for t in range(T):
        if fast:
            x = gain * x + drive[t]
            if not np.all(np.isfinite(x)):
                raise NonFiniteState("particle state is not finite")
        else:
            x = unit_map(model, theta, x, incr[t], delta)
        logw = model.obs_logpdf(theta, y[t], x)
        if coupled:
            if fast:
                xc = gain_c * xc + drive_c[t]
            else:
                xc = unit_map(model, theta, xc, fgn.coarsen(incr[t]), 2 * delta)
            logw = np.maximum(logw, model.obs_logpdf(theta, y[t], xc))
        logw = np.broadcast_to(np.asarray(logw, dtype=float), (n_particles,))
        total = prev + logw
        top = total.max()
        if not np.isfinite(top):
            raise DegenerateWeights(f"all particle weights vanished at t={t + 1}")
        w = np.exp(total - top)
        mass = w.sum()
        log_c += top + np.log(mass)
        w /= mass
        ess_hist[t] = 1.0 / (w @ w)
        finite = np.isfinite(logw)
        spread[t] = np.ptp(logw[finite]) if not finite.all() else np.ptp(logw)
        if t == T - 1:
            break
        if not adaptive or ess_hist[t] < ess_threshold * n_particles:
            idx = _resample(w, rng)
            ledger.add_resample(n_particles)
            prev = np.full(n_particles, -np.log(n_particles))
        else:
            idx = np.arange(n_particles)
            prev = np.log(w)
        parents.append(idx)
        x = x[idx]
        if coupled:
            xc = xc[idx]

    system = ParticleSystem(pool=pool, parents=parents, log_weights=total)
    noise = trace_trajectory(system, w, rng)
    return FilterOutput(
        log_norm_const=float(log_c),
        noise=noise,
        ess=ess_hist,
        log_weight_spread=spread,
        system=system if keep_system else None,
    )


def pf_single(model: ModelSpec, theta, level: int, n_particles: int, y, rng, *, ledger=None,
              adaptive=False, ess_threshold=0.5, keep_system=False) -> FilterOutput:
    """Bootstrap filter for the pseudo-increment target at one level.

    Resamples multinomially at every step unless ``adaptive`` is set, in
    which case resampling happens only when ESS drops below
    ``ess_threshold * n_particles``.
    """
    return _run_filter(model, theta, level, n_particles, y, rng, False, ledger, adaptive, ess_threshold, keep_system)


def pf_coupled(model: ModelSpec, theta, level: int, n_particles: int, y, rng, *, ledger=None,
               adaptive=False, ess_threshold=0.5, keep_system=False) -> FilterOutput:
    """Filter for the max-coupled fine/coarse target; needs ``level >= 1``."""
    if level < 1:
        raise ValueError("coupled filter needs a coarser level")
    return _run_filter(model, theta, level, n_particles, y, rng, True, ledger, adaptive, ess_threshold, keep_system)
