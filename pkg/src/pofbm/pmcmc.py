"""Particle marginal Metropolis-Hastings over (parameters, noise trajectory)."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import fgn
from .errors import DegenerateWeights, NonFiniteState
from .ledger import CostLedger
from .pf import pf_coupled, pf_single
from .sde import ModelSpec

DEFAULT_STEP = 0.25
MAX_INIT_TRIES = 100


@dataclass(frozen=True, eq=False)
class ChainRecord:
    theta: np.ndarray
    noise: np.ndarray
    log_c: float
    log_prior: float
    accepted: bool
    origin: int  # iteration at which this (theta, noise) pair was created


@dataclass
class Chain:
    level: int
    n_particles: int
    coupled: bool
    records: list = field(default_factory=list)
    ledger: CostLedger = field(default_factory=CostLedger)

    @property
    def n_accepted(self) -> int:
        return sum(r.accepted for r in self.records[1:])

    @property
    def acceptance_rate(self) -> float:
        n = len(self.records) - 1
        return self.n_accepted / n if n else float("nan")

    @property
    def thetas(self) -> np.ndarray:
        return np.array([r.theta for r in self.records])

    @property
    def log_cs(self) -> np.ndarray:
        return np.array([r.log_c for r in self.records])


def propose(theta, step, rng) -> np.ndarray:
    """Log-normal random walk: ``theta_j * exp(step_j * xi_j)``."""
    theta = np.asarray(theta, dtype=float)
    step = np.broadcast_to(np.asarray(step, dtype=float), theta.shape)
    return theta * np.exp(step * rng.standard_normal(theta.shape))


def log_jacobian(theta_new, theta_old) -> float:
    return float(np.sum(np.log(theta_new) - np.log(theta_old)))


def accept_log_ratio(log_c_new, log_prior_new, log_c, log_prior, log_jacobian_correction=0.0) -> float:
    return min(0.0, (log_c_new + log_prior_new) - (log_c + log_prior) + log_jacobian_correction)


def iter_pmmh(model: ModelSpec, level: int, n_particles: int, n_iter: int, y, rng, *,
              coupled=False, step=DEFAULT_STEP, ledger=None, max_init_tries=MAX_INIT_TRIES,
              filter_kwargs=None) -> Iterator[ChainRecord]:
    """Yield the ``n_iter + 1`` chain records one at a time.

    Rejected iterations yield a record sharing ``theta``, ``noise`` and
    ``origin`` with its predecessor.  A candidate whose filter degenerates or
    whose states overflow is rejected.
    """
    if n_particles < 1 or n_iter < 0:
        raise ValueError("need n_particles >= 1 and n_iter >= 0")
    ledger = ledger if ledger is not None else CostLedger()
    run = pf_coupled if coupled else pf_single
    kwargs = dict(filter_kwargs or {})

    def evaluate(theta):
        # extreme proposals can overflow the Euler scheme; that counts as zero likelihood
        with np.errstate(over="ignore", invalid="ignore"):
            out = run(model, theta, level, n_particles, y, rng, ledger=ledger, **kwargs)
        return out.log_norm_const, out.noise

    for attempt in range(max_init_tries):
        theta = model.sample_prior(rng)
        try:
            log_c, noise = evaluate(theta)
            break
        except (DegenerateWeights, NonFiniteState):
            if attempt == max_init_tries - 1:
                raise
    log_prior = float(model.log_prior(theta))
    current = ChainRecord(theta, noise, log_c, log_prior, True, 0)
    yield current
    for i in range(1, n_iter + 1):
        cand = propose(current.theta, step, rng)
        cand_prior = float(model.log_prior(cand))
        accepted = False
        if np.isfinite(cand_prior):
            try:
                cand_c, cand_noise = evaluate(cand)
            except (DegenerateWeights, NonFiniteState):
                cand_c = -np.inf
            if np.isfinite(cand_c):
                ratio = accept_log_ratio(cand_c, cand_prior, current.log_c, current.log_prior,
                                         log_jacobian(cand, current.theta))
                accepted = rng.random() < np.exp(ratio)
        if accepted:
            current = ChainRecord(cand, cand_noise, cand_c, cand_prior, True, i)
        else:
            current = ChainRecord(current.theta, current.noise, current.log_c, current.log_prior, False,
                                  current.origin)
        yield current


def _collect(model, level, n_particles, n_iter, y, rng, coupled, step, ledger, **kwargs) -> Chain:
    chain = Chain(level=level, n_particles=n_particles, coupled=coupled,
                  ledger=ledger if ledger is not None else CostLedger())
    chain.records.extend(iter_pmmh(model, level, n_particles, n_iter, y, rng, coupled=coupled,
                                   step=step, ledger=chain.ledger, **kwargs))
    return chain


def pmmh_single(model, level, n_particles, n_iter, y, rng, *, step=DEFAULT_STEP, ledger=None, **kwargs) -> Chain:
    return _collect(model, level, n_particles, n_iter, y, rng, False, step, ledger, **kwargs)


def pmmh_coupled(model, level, n_particles, n_iter, y, rng, *, step=DEFAULT_STEP, ledger=None, **kwargs) -> Chain:
    if level < 1:
        raise ValueError("coupled chain needs a coarser level")
    return _collect(model, level, n_particles, n_iter, y, rng, True, step, ledger, **kwargs)


def write_chain_csv(chain: Chain, path, param_names) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", *param_names, "log_c", "accepted"])
        for i, rec in enumerate(chain.records):
            writer.writerow([i, *(repr(float(v)) for v in rec.theta), repr(float(rec.log_c)), int(rec.accepted)])


_HEADER = struct.Struct("<iii")


def write_noise_sidecar(chain: Chain, path) -> None:
    """Little-endian ``int32`` header (level, T, block length), then float64 blocks.

    Records follow in chain order; each is ``T`` blocks in time order.
    """
    if not chain.records:
        raise ValueError("empty chain")
    T, width = chain.records[0].noise.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(chain.level, T, width))
        for rec in chain.records:
            fh.write(np.ascontiguousarray(rec.noise, dtype="<f8").tobytes())


def read_noise_sidecar(path):
    """Return ``(level, noise)`` with noise shaped ``(records, T, block length)``."""
    raw = Path(path).read_bytes()
    level, T, width = _HEADER.unpack_from(raw)
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if width != 2 * fgn.steps_per_unit(level) or data.size % (T * width):
        raise ValueError("corrupt noise sidecar")
    return level, data.reshape(-1, T, width)
