"""Single-level and multilevel runs, the cost-versus-MSE study and rate fits.

Every unit of work (one chain) owns a Philox stream addressed by
``(seed, purpose, level, repeat, chain)``, so results do not depend on how
units are spread over workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import fgn
from ..errors import InsufficientPoints
from ..ledger import CostLedger
from ..ml import (Allocation, LevelEstimate, MultilevelEstimate, allocate, level_estimate,
                  parameter_phi, summarize_chain, telescope)
from ..pmcmc import Chain, iter_pmmh, pmmh_single
from ..sde import synth_generate
from .config import ExperimentConfig
from .io import ingest_csv

PURPOSES = {"data": 0, "single": 1, "multi": 2, "reference": 3, "study-single": 4, "study-multi": 5, "fgn": 6}


def rng_for(seed: int, purpose: str, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(PURPOSES[purpose],) + tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def pool_map(fn, tasks, workers=1) -> list:
    """Order-preserving map; runs inline for one worker."""
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def state_phi(theta, states):
    """Parameters followed by the unit-time states."""
    theta = np.asarray(theta, dtype=float)
    return np.concatenate([theta, np.asarray(states, dtype=float)], axis=-1)


@dataclass
class Observations:
    y: np.ndarray
    latent: Optional[np.ndarray] = None  # unit-time states when simulated


def load_observations(cfg: ExperimentConfig) -> Observations:
    if cfg.csv is not None:
        return Observations(ingest_csv(cfg.csv))
    model = cfg.build_model()
    theta = cfg.true_theta(model)
    y, traj = synth_generate(model, theta, cfg.synth_level, cfg.T, rng_for(cfg.seed, "data"), method=cfg.path_method)
    return Observations(y, traj.skeleton)


def _ledger(cfg) -> CostLedger:
    return CostLedger(weights=dict(cfg.cost_weights))


def _filter_kwargs(cfg):
    return {"adaptive": cfg.adaptive, "ess_threshold": cfg.ess_threshold}


def _n_particles(cfg, y):
    return cfg.particles if cfg.particles > 0 else len(y)


def run_level(cfg: ExperimentConfig, y, level: int, n_iter: int, rng, *, coupled: bool, phi=parameter_phi,
              keep_chain=False):
    """One chain at ``level`` followed by its weight summary.

    Returns ``(LevelEstimate, ChainSummary, Chain or None)``.  Without
    ``keep_chain`` records are streamed into the summary and dropped.
    """
    model = cfg.build_model()
    run_ledger = _ledger(cfg)
    weight_ledger = _ledger(cfg)
    kwargs = dict(coupled=coupled, step=cfg.step, ledger=run_ledger, filter_kwargs=_filter_kwargs(cfg))
    n_part = _n_particles(cfg, y)
    if keep_chain:
        chain = Chain(level=level, n_particles=n_part, coupled=coupled, ledger=run_ledger)
        chain.records.extend(iter_pmmh(model, level, n_part, n_iter, y, rng, **kwargs))
        records = chain.records
    else:
        chain = None
        records = iter_pmmh(model, level, n_part, n_iter, y, rng, **kwargs)
    summary = summarize_chain(model, records, level, y, coupled=coupled, phi=phi, method=cfg.path_method,
                              burn_in=cfg.burn_in, thin=cfg.thin, ledger=weight_ledger)
    est = level_estimate(summary, run_ledger)
    est.cost.weights = dict(cfg.cost_weights)
    return est, summary, chain


@dataclass
class SingleLevelResult:
    chain: Chain
    estimate: LevelEstimate
    summary: object
    n_params: int

    @property
    def params(self):
        return self.estimate.fine[: self.n_params]

    @property
    def params_uncorrected(self):
        return self.estimate.uncorrected[: self.n_params]

    @property
    def states(self):
        return self.estimate.fine[self.n_params:]

    @property
    def states_uncorrected(self):
        return self.estimate.uncorrected[self.n_params:]

    @property
    def cost(self) -> CostLedger:
        return self.estimate.cost


def run_single_level(cfg: ExperimentConfig, y) -> SingleLevelResult:
    """PMMH at ``cfg.level``; parameter and state means with and without the J0 correction."""
    rng = rng_for(cfg.seed, "single", cfg.level)
    est, summary, chain = run_level(cfg, y, cfg.level, cfg.iterations, rng, coupled=False, phi=state_phi,
                                    keep_chain=True)
    return SingleLevelResult(chain=chain, estimate=est, summary=summary, n_params=cfg.build_model().dim)


def multilevel_allocation(cfg: ExperimentConfig, epsilon=None, base_m=None, l_max=None) -> Allocation:
    if cfg.ml_iterations is not None and epsilon is None:
        levels = sorted(cfg.ml_iterations)
        n = cfg.particles if cfg.particles > 0 else cfg.T
        return Allocation(epsilon=float("nan"), l_min=levels[0], L=levels[-1], M=dict(cfg.ml_iterations),
                          N={l: n for l in levels})
    return allocate(cfg.epsilon if epsilon is None else epsilon, cfg.alpha, cfg.beta, cfg.gamma, cfg.l_min,
                    base_m=cfg.base_m if base_m is None else base_m, base_n=cfg.particles or cfg.T,
                    l_max=cfg.l_max if l_max is None else l_max)


def _level_task(args):
    cfg, y, level, n_iter, purpose, key, coupled = args
    est, summary, _ = run_level(cfg, y, level, n_iter, rng_for(cfg.seed, purpose, level, *key), coupled=coupled)
    return est, summary


@dataclass
class MultilevelResult:
    allocation: Allocation
    estimate: MultilevelEstimate
    summaries: dict


def run_multilevel(cfg: ExperimentConfig, y, *, allocation: Optional[Allocation] = None, purpose="multi",
                   key=(), workers=None) -> MultilevelResult:
    """Independent chains per level (plain at ``l_min``, coupled above), weighted and telescoped."""
    alloc = allocation if allocation is not None else multilevel_allocation(cfg)
    tasks = [(cfg, y, l, alloc.M[l], purpose, key, l > alloc.l_min) for l in alloc.levels]
    out = pool_map(_level_task, tasks, cfg.workers if workers is None else workers)
    ests = [o[0] for o in out]
    ml = telescope(ests[0], ests[1:])
    ml.cost.weights = dict(cfg.cost_weights)
    return MultilevelResult(alloc, ml, {e.level: o[1] for e, o in zip(ests, out)})


# -- cost versus MSE ---------------------------------------------------------


@dataclass
class RateFit:
    log_mse: np.ndarray
    log_cost: np.ndarray
    slope: float
    intercept: float
    residual: float  # root-mean-square residual of the fit


def fit_rate(mse, cost) -> RateFit:
    """Least-squares line of log cost against log MSE."""
    mse = np.asarray(mse, dtype=float)
    cost = np.asarray(cost, dtype=float)
    ok = (mse > 0) & (cost > 0) & np.isfinite(mse) & np.isfinite(cost)
    if ok.sum() < 3:
        raise InsufficientPoints(f"need at least 3 usable points, got {int(ok.sum())}")
    x, yv = np.log(mse[ok]), np.log(cost[ok])
    slope, intercept = np.polyfit(x, yv, 1)
    resid = yv - (slope * x + intercept)
    return RateFit(x, yv, float(slope), float(intercept), float(np.sqrt(np.mean(resid**2))))


@dataclass
class Reference:
    level: int
    iterations: int
    chains: int
    value: np.ndarray
    se: np.ndarray


@dataclass
class StudyPoint:
    method: str
    level: int  # finest level of the run
    repeat: int
    estimate: np.ndarray
    cost: float
    ledger: dict


@dataclass
class StudyResult:
    param_names: tuple
    reference: Optional[Reference]
    points: list = field(default_factory=list)

    def methods(self) -> list:
        return sorted({p.method for p in self.points})

    def summary(self) -> list:
        """Rows ``(method, level, parameter, mse, variance, bias2, mean_cost, repeats)``."""
        rows = []
        for method in self.methods():
            for level in sorted({p.level for p in self.points if p.method == method}):
                pts = [p for p in self.points if p.method == method and p.level == level]
                est = np.array([p.estimate for p in pts])
                cost = float(np.mean([p.cost for p in pts]))
                for j, name in enumerate(self.param_names):
                    var = float(est[:, j].var())
                    bias2 = float((est[:, j].mean() - self.reference.value[j]) ** 2)
                    rows.append((method, level, name, var + bias2, var, bias2, cost, len(pts)))
        return rows

    def rates(self) -> dict:
        """``{(method, parameter): RateFit}``."""
        rows = self.summary()
        out = {}
        for method in self.methods():
            for name in self.param_names:
                sel = [r for r in rows if r[0] == method and r[2] == name]
                out[(method, name)] = fit_rate([r[3] for r in sel], [r[6] for r in sel])
        return out


def single_iterations(cfg: ExperimentConfig, level: int) -> int:
    eps = fgn.mesh(level) ** cfg.alpha
    return max(1, math.ceil(cfg.single_base * eps**-2 - 1e-9))


def study_allocation(cfg: ExperimentConfig, level: int) -> Allocation:
    eps = fgn.mesh(level) ** cfg.alpha
    return allocate(eps, cfg.alpha, cfg.beta, cfg.gamma, min(cfg.l_min, level), base_m=cfg.study_multi_base,
                    base_n=cfg.particles or cfg.T, l_max=level)


def _study_task(args):
    cfg, y, method, level, repeat = args
    if method == "single":
        rng = rng_for(cfg.seed, "study-single", level, repeat)
        est, _, _ = run_level(cfg, y, level, single_iterations(cfg, level), rng, coupled=False)
        value, ledger = est.fine, est.cost
    else:
        res = run_multilevel(cfg, y, allocation=study_allocation(cfg, level), purpose="study-multi",
                             key=(level, repeat), workers=1)
        value, ledger = res.estimate.total, res.estimate.cost
    return StudyPoint(method, level, repeat, np.asarray(value, dtype=float), float(ledger.total), ledger.as_dict())


def _reference_task(args):
    cfg, y, level, n_iter, chain = args
    est, _, _ = run_level(cfg, y, level, n_iter, rng_for(cfg.seed, "reference", level, chain), coupled=False)
    return est


def reference_iterations(cfg: ExperimentConfig) -> int:
    largest = 0
    for level in cfg.study_levels:
        largest = max(largest, single_iterations(cfg, level), max(study_allocation(cfg, level).M.values()))
    return math.ceil(cfg.ref_factor * largest)


def run_reference(cfg: ExperimentConfig, y) -> Reference:
    """Pooled J0-corrected estimate from ``ref_chains`` independent chains at the reference level."""
    level = cfg.reference_level
    total = reference_iterations(cfg)
    per_chain = math.ceil(total / cfg.ref_chains)
    tasks = [(cfg, y, level, per_chain, c) for c in range(cfg.ref_chains)]
    ests = pool_map(_reference_task, tasks, cfg.workers)
    values = np.array([e.fine for e in ests])
    value = values.mean(axis=0)
    if len(ests) > 1:
        se = values.std(axis=0, ddof=1) / np.sqrt(len(ests))
    else:
        se = ests[0].se if ests[0].se is not None else np.full(value.shape, np.nan)
    return Reference(level, per_chain * cfg.ref_chains, cfg.ref_chains, value, se)


def mse_study(cfg: ExperimentConfig, y, methods=("single", "multi"), reference: Optional[Reference] = None,
              progress=None) -> StudyResult:
    """Repeated single-level and multilevel runs at each study level, scored against a reference."""
    model = cfg.build_model()
    ref = reference if reference is not None else run_reference(cfg, y)
    if progress:
        progress(f"reference level {ref.level}: {ref.value} +/- {ref.se}")
    points = []
    for method in methods:
        for level in cfg.study_levels:
            tasks = [(cfg, y, method, level, r) for r in range(cfg.repeats)]
            done = pool_map(_study_task, tasks, cfg.workers)
            points.extend(done)
            if progress:
                progress(f"{method} level {level}: {len(done)} repeats, mean cost {np.mean([p.cost for p in done]):.4g}")
    return StudyResult(param_names=model.param_names, reference=ref, points=points)
