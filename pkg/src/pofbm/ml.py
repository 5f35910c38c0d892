"""Importance-weight corrections and the multilevel estimator.

Chains target pseudo-increment posteriors; every distinct chain record is
reweighted post hoc towards the exact-path posterior at its level:

* base level:      log J0 = sum_t [log g(y_t | x_true) - log g(y_t | x_pseudo)]
* coupled level l: log J_fine   = sum_t [log g(y_t | x_true^l)   - log d_t]
                   log J_coarse = sum_t [log g(y_t | x_true^l-1) - log d_t]
  with d_t = max(g(y_t | x_pseudo^l), g(y_t | x_pseudo^l-1)).

Test functions are evaluated on exact-path skeletons (fine, or the coarsened
exact path through the coarse scheme), matching the weight numerators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np
from scipy.special import logsumexp

from . import fgn
from .errors import AllWeightsDegenerate, InvalidRates, MissingLevel, NonFiniteWeight
from .ledger import CostLedger
from .sde import ModelSpec, skeleton_map


def parameter_phi(theta, states):
    """Default test functions: the parameters themselves."""
    return np.asarray(theta, dtype=float)


@dataclass
class LevelTerms:
    """Per-record weight ingredients for a batch of records."""

    log_g_true: np.ndarray  # (R, T)
    log_g_pseudo: np.ndarray  # (R, T)
    x_true: np.ndarray
    x_pseudo: np.ndarray
    log_g_true_coarse: Optional[np.ndarray] = None
    log_g_pseudo_coarse: Optional[np.ndarray] = None
    x_true_coarse: Optional[np.ndarray] = None
    x_pseudo_coarse: Optional[np.ndarray] = None

    @property
    def log_denominator(self) -> np.ndarray:
        if self.log_g_pseudo_coarse is None:
            return self.log_g_pseudo
        return np.maximum(self.log_g_pseudo, self.log_g_pseudo_coarse)

    @property
    def log_j0(self) -> np.ndarray:
        return _checked(np.sum(self.log_g_true - self.log_g_pseudo, axis=-1))

    @property
    def log_j_fine(self) -> np.ndarray:
        return _checked(np.sum(self.log_g_true - self.log_denominator, axis=-1))

    @property
    def log_j_coarse(self) -> np.ndarray:
        return _checked(np.sum(self.log_g_true_coarse - self.log_denominator, axis=-1))


def _checked(values):
    if not np.all(np.isfinite(values)):
        raise NonFiniteWeight("importance weight is not finite")
    return values


def level_terms(model: ModelSpec, theta, noise, level: int, y, *, coupled=False, method="causal",
                ledger=None) -> LevelTerms:
    """Evaluate pseudo and exact skeletons for ``(..., T, 2m)`` noise and their likelihood terms."""
    theta = np.asarray(theta, dtype=float)
    noise = np.asarray(noise, dtype=float)
    y = np.asarray(y, dtype=float)
    pseudo, exact = fgn.paths(model.hurst, noise, level, method=method, ledger=ledger)
    x_pseudo = skeleton_map(model, theta, pseudo, level)
    x_true = skeleton_map(model, theta, exact, level)
    th = theta[..., None, :]
    out = LevelTerms(
        log_g_true=np.broadcast_to(model.obs_logpdf(th, y, x_true), x_true.shape),
        log_g_pseudo=np.broadcast_to(model.obs_logpdf(th, y, x_pseudo), x_pseudo.shape),
        x_true=x_true,
        x_pseudo=x_pseudo,
    )
    n_paths = int(np.prod(noise.shape[:-2]))
    steps = pseudo.shape[-1]
    if ledger is not None:
        ledger.add_euler(2 * n_paths * steps)
    if coupled:
        if level < 1:
            raise ValueError("coupled weights need level >= 1")
        out.x_pseudo_coarse = skeleton_map(model, theta, fgn.coarsen(pseudo), level - 1)
        out.x_true_coarse = skeleton_map(model, theta, fgn.coarsen(exact), level - 1)
        out.log_g_pseudo_coarse = np.broadcast_to(model.obs_logpdf(th, y, out.x_pseudo_coarse), x_true.shape)
        out.log_g_true_coarse = np.broadcast_to(model.obs_logpdf(th, y, out.x_true_coarse), x_true.shape)
        if ledger is not None:
            ledger.add_euler(n_paths * steps)
    return out


def weight_J0(model, theta, noise, level, y, *, method="causal", ledger=None):
    """Log base-level correction; a float for one record, an array for a batch."""
    out = level_terms(model, theta, noise, level, y, method=method, ledger=ledger).log_j0
    return float(out) if np.ndim(out) == 0 else out


def weight_Jl(model, theta, noise, level, y, which="fine", *, method="causal", ledger=None):
    """Log fine (``which="fine"``) or coarse (``"coarse"``) correction at a coupled level."""
    terms = level_terms(model, theta, noise, level, y, coupled=True, method=method, ledger=ledger)
    if which == "fine":
        out = terms.log_j_fine
    elif which == "coarse":
        out = terms.log_j_coarse
    else:
        raise ValueError("which must be 'fine' or 'coarse'")
    return float(out) if np.ndim(out) == 0 else out


def self_normalized(values, log_weights):
    """``sum(v * J) / sum(J)`` along the first axis, computed from log-weights."""
    values = np.asarray(values, dtype=float)
    log_weights = np.asarray(log_weights, dtype=float)
    top = np.max(log_weights) if log_weights.size else -np.inf
    if not np.isfinite(top):
        raise AllWeightsDegenerate("no record carries a finite positive weight")
    w = np.exp(log_weights - top)
    w = w / w.sum()
    return np.tensordot(w, values, axes=(0, 0))


def weight_ess(log_weights) -> float:
    log_weights = np.asarray(log_weights, dtype=float)
    return float(np.exp(2 * logsumexp(log_weights) - logsumexp(2 * log_weights)))


@dataclass
class ChainSummary:
    """Distinct chain records (with multiplicities) and their weights and test-function values."""

    level: int
    coupled: bool
    origins: np.ndarray
    counts: np.ndarray
    thetas: np.ndarray
    log_j_fine: np.ndarray  # log J0 on the base level
    phi_fine: np.ndarray
    phi_pseudo: np.ndarray
    log_j_coarse: Optional[np.ndarray] = None
    phi_coarse: Optional[np.ndarray] = None
    ledger: CostLedger = field(default_factory=CostLedger)
    sequence: Optional[np.ndarray] = None  # distinct-record index of each kept iteration

    @property
    def n_records(self) -> int:
        return int(self.counts.sum())


def summarize_chain(model: ModelSpec, records: Iterable, level: int, y, *, coupled=False,
                    phi: Callable = parameter_phi, method="causal", burn_in=0, thin=1, batch=128,
                    ledger=None) -> ChainSummary:
    """Stream chain records, computing weights once per distinct record.

    Record 0 (the initialisation) is used only when the chain has no other
    record; the first ``burn_in`` iterations after it are discarded and then
    every ``thin``-th iteration is kept.
    """
    ledger = ledger if ledger is not None else CostLedger()
    position = {}
    counts, origins, thetas = [], [], []
    chunks = {"lf": [], "lc": [], "pf": [], "pc": [], "pp": []}
    pending = []
    sequence = []
    first = None

    def flush():
        if not pending:
            return
        th = np.array([p[0] for p in pending])
        nz = np.array([p[1] for p in pending])
        terms = level_terms(model, th, nz, level, y, coupled=coupled, method=method, ledger=ledger)
        if coupled:
            chunks["lf"].append(terms.log_j_fine)
            chunks["lc"].append(terms.log_j_coarse)
            chunks["pc"].append(np.atleast_2d(phi(th, terms.x_true_coarse).T).T)
        else:
            chunks["lf"].append(terms.log_j0)
        chunks["pf"].append(np.atleast_2d(phi(th, terms.x_true).T).T)
        chunks["pp"].append(np.atleast_2d(phi(th, terms.x_pseudo).T).T)
        pending.clear()

    def add(rec):
        key = rec.origin
        if key in position:
            counts[position[key]] += 1
            sequence.append(position[key])
            return
        position[key] = len(counts)
        sequence.append(len(counts))
        counts.append(1)
        origins.append(key)
        thetas.append(rec.theta)
        pending.append((rec.theta, rec.noise))
        if len(pending) >= batch:
            flush()

    for i, rec in enumerate(records):
        if i == 0:
            first = rec
            continue
        if i <= burn_in or (i - burn_in - 1) % thin:
            continue
        add(rec)
    if not counts:
        if first is None:
            raise ValueError("no chain records")
        add(first)
    flush()

    def cat(name):
        return np.concatenate(chunks[name]) if chunks[name] else None

    return ChainSummary(
        level=level,
        coupled=coupled,
        origins=np.array(origins),
        counts=np.array(counts),
        thetas=np.array(thetas),
        log_j_fine=cat("lf"),
        phi_fine=cat("pf"),
        phi_pseudo=cat("pp"),
        log_j_coarse=cat("lc"),
        phi_coarse=cat("pc"),
        ledger=ledger,
        sequence=np.array(sequence, dtype=int),
    )


def _influence(values, log_weights, estimate):
    # linearised contribution of each term to a self-normalised ratio
    w = np.exp(log_weights - np.max(log_weights))
    w = w / w.mean()
    return w[:, None] * (np.atleast_2d(values.T).T - estimate)


def batch_means_se(influence, n_batches=20) -> np.ndarray:
    """Standard error of the mean of a correlated ``(n, p)`` sequence by batch means."""
    influence = np.atleast_2d(np.asarray(influence, dtype=float).T).T
    n = influence.shape[0]
    b = min(n_batches, n)
    if b < 2:
        return np.full(influence.shape[1:], np.nan)
    size = n // b
    means = influence[: b * size].reshape(b, size, -1).mean(axis=1)
    return np.sqrt(means.var(axis=0, ddof=1) / b)


def chain_standard_error(summary: ChainSummary, estimate: "LevelEstimate", n_batches=20) -> np.ndarray:
    """Batch-means standard error of the level term (fine, or fine minus coarse)."""
    seq = summary.sequence
    infl = _influence(summary.phi_fine[seq], summary.log_j_fine[seq], estimate.fine)
    if summary.coupled:
        infl = infl - _influence(summary.phi_coarse[seq], summary.log_j_coarse[seq], estimate.coarse)
    return batch_means_se(infl, n_batches)


@dataclass
class LevelEstimate:
    level: int
    fine: np.ndarray
    coarse: Optional[np.ndarray]
    ess_fine: float
    ess_coarse: Optional[float]
    uncorrected: np.ndarray
    n_records: int
    cost: CostLedger = field(default_factory=CostLedger)
    se: Optional[np.ndarray] = None

    @property
    def increment(self) -> np.ndarray:
        return self.fine if self.coarse is None else self.fine - self.coarse


def level_estimate(summary: ChainSummary, cost: Optional[CostLedger] = None) -> LevelEstimate:
    log_counts = np.log(summary.counts)
    fine = self_normalized(summary.phi_fine, summary.log_j_fine + log_counts)
    ess_fine = weight_ess(summary.log_j_fine + log_counts)
    coarse = ess_coarse = None
    if summary.coupled:
        coarse = self_normalized(summary.phi_coarse, summary.log_j_coarse + log_counts)
        ess_coarse = weight_ess(summary.log_j_coarse + log_counts)
    uncorrected = self_normalized(summary.phi_pseudo, log_counts)
    ledger = CostLedger.combined([summary.ledger] + ([cost] if cost is not None else []))
    out = LevelEstimate(summary.level, fine, coarse, ess_fine, ess_coarse, uncorrected,
                        summary.n_records, ledger)
    if summary.sequence is not None and len(summary.sequence) > 1:
        out.se = chain_standard_error(summary, out)
    return out


@dataclass
class Allocation:
    epsilon: float
    l_min: int
    L: int
    M: dict
    N: dict

    @property
    def levels(self) -> list:
        return list(range(self.l_min, self.L + 1))


def allocate(epsilon, alpha=0.5, beta=0.5, gamma=1.0, l_min=3, base_m=1.0, base_n=1, l_max=None) -> Allocation:
    """Choose the finest level and per-level iteration counts for accuracy ``epsilon``.

    ``L`` is the smallest level (not below ``l_min``) with ``Delta_L**alpha <= epsilon`` and

        M_l = ceil(base_m * eps^-2 * Delta_l^((beta+gamma)/2) * sum_k Delta_k^((beta-gamma)/2))

    summing over ``k = l_min..L``.
    """
    if not 0.0 < epsilon < 1.0:
        raise InvalidRates("epsilon must lie in (0, 1)")
    if alpha <= 0 or beta <= 0 or gamma < 1:
        raise InvalidRates("need alpha > 0, beta > 0, gamma >= 1")
    L = max(l_min, math.ceil(-math.log2(epsilon) / alpha - 1e-9))
    if l_max is not None:
        L = min(L, l_max)
    levels = range(l_min, L + 1)
    total = sum(2.0 ** (-k * (beta - gamma) / 2) for k in levels)
    M = {l: max(1, math.ceil(base_m * epsilon**-2 * 2.0 ** (-l * (beta + gamma) / 2) * total - 1e-9))
         for l in levels}
    N = {l: int(base_n) for l in levels}
    return Allocation(epsilon=epsilon, l_min=l_min, L=L, M=M, N=N)


@dataclass
class MultilevelEstimate:
    base: LevelEstimate
    increments: list
    total: np.ndarray
    cost: CostLedger

    @property
    def levels(self) -> list:
        return [self.base.level] + [e.level for e in self.increments]

    @property
    def se(self):
        # levels are independent, so variances add
        parts = [self.base] + list(self.increments)
        if any(p.se is None for p in parts):
            return None
        return np.sqrt(sum(np.square(p.se) for p in parts))


def telescope(base: LevelEstimate, increments: list) -> MultilevelEstimate:
    """Base-level corrected estimate plus the fine-minus-coarse increments above it."""
    increments = sorted(increments, key=lambda e: e.level)
    expected = list(range(base.level + 1, base.level + 1 + len(increments)))
    if [e.level for e in increments] != expected:
        raise MissingLevel(f"increments must cover levels {expected}, got {[e.level for e in increments]}")
    total = np.array(base.fine, dtype=float, copy=True)
    for est in increments:
        total = total + est.increment
    cost = CostLedger.combined([base.cost] + [e.cost for e in increments])
    return MultilevelEstimate(base=base, increments=increments, total=total, cost=cost)
