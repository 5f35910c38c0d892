"""Scalar fBM-driven SDE models and their Euler discretisation.

Parameters travel as float arrays whose last axis follows
``ModelSpec.param_names``; model callables index ``theta[..., j]`` so a batch
of parameter vectors broadcasts against a batch of states.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from . import fgn
from .errors import NonFiniteState, UnsupportedDiffusion

LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class GammaPrior:
    shape: float
    scale: float

    def logpdf(self, value):
        return stats.gamma.logpdf(value, a=self.shape, scale=self.scale)

    def sample(self, rng):
        return rng.gamma(self.shape, self.scale)

    @property
    def mean(self):
        return self.shape * self.scale


@dataclass(frozen=True)
class ModelSpec:
    name: str
    param_names: tuple
    drift: Callable
    diffusion: Callable
    obs_logpdf: Callable
    obs_sample: Callable
    priors: tuple
    hurst: float
    x0: float = 0.0
    # theta -> (intercept, slope, sigma) when drift is affine in x and the
    # diffusion does not depend on x; enables the closed-form unit map.
    affine: Optional[Callable] = None
    # (eta, eta_inv) with eta' = 1/sigma; used by lamperti() for
    # state-dependent diffusions.
    lamperti_pair: Optional[tuple] = None
    initial: Optional[Callable] = None
    constants: tuple = ()

    @property
    def dim(self) -> int:
        return len(self.param_names)

    def initial_state(self, theta):
        if self.initial is not None:
            return self.initial(theta)
        return self.x0

    def log_prior(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        out = 0.0
        for j, prior in enumerate(self.priors):
            out += prior.logpdf(theta[..., j])
        return out

    def sample_prior(self, rng) -> np.ndarray:
        return np.array([prior.sample(rng) for prior in self.priors])

    def constant(self, key, default=None):
        return dict(self.constants).get(key, default)


def ou_model(hurst=0.4, tau2=0.2, x0=0.0, priors=None) -> ModelSpec:
    """``dX = -theta X dt + sigma dB^H`` observed as ``Y ~ N(X, tau2)``."""
    if priors is None:
        priors = (GammaPrior(1.0, 1.0), GammaPrior(0.5, 1.0))
    tau2 = float(tau2)

    def drift(theta, x):
        return -theta[..., 0] * x

    def diffusion(theta, x):
        return theta[..., 1] * np.ones_like(x)

    def obs_logpdf(theta, y, x):
        return -0.5 * (LOG_2PI + np.log(tau2) + (y - x) ** 2 / tau2)

    def obs_sample(theta, x, rng):
        x = np.asarray(x, dtype=float)
        if tau2 == 0.0:
            return x.copy()
        return x + np.sqrt(tau2) * rng.standard_normal(x.shape)

    def affine(theta):
        return 0.0, -theta[..., 0], theta[..., 1]

    return ModelSpec(
        name="ou",
        param_names=("theta", "sigma"),
        drift=drift,
        diffusion=diffusion,
        obs_logpdf=obs_logpdf,
        obs_sample=obs_sample,
        priors=tuple(priors),
        hurst=fgn.check_hurst(hurst),
        x0=float(x0),
        affine=affine,
        constants=(("tau2", tau2),),
    )


MODELS = {"ou": ou_model}


def register_model(name: str, factory: Callable[..., ModelSpec]) -> None:
    MODELS[name] = factory


def make_model(name: str, **kwargs) -> ModelSpec:
    try:
        factory = MODELS[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; registered: {sorted(MODELS)}") from None
    return factory(**kwargs)


def euler_step(model: ModelSpec, theta, x, db, delta):
    theta = np.asarray(theta, dtype=float)
    out = x + model.drift(theta, x) * delta + model.diffusion(theta, x) * db
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("Euler step produced a non-finite state")
    return out


def affine_unit_terms(model: ModelSpec, theta, increments, delta):
    """``(gain, drive)`` with ``unit_map(x) == gain * x + drive`` for affine models."""
    a0, a1, sig = model.affine(theta)
    m = increments.shape[-1]
    c = 1.0 + np.asarray(a1, dtype=float) * delta
    w = np.asarray(c)[..., None] ** np.arange(m - 1, -1, -1)
    drive = sig * np.einsum("...k,...k->...", increments, w) + a0 * delta * w.sum(axis=-1)
    return c**m, drive


def unit_map(model: ModelSpec, theta, x_prev, increments, delta: float, exact_loop: bool = False):
    """Compose ``increments.shape[-1]`` Euler steps starting from ``x_prev``."""
    theta = np.asarray(theta, dtype=float)
    increments = np.asarray(increments, dtype=float)
    if model.affine is not None and not exact_loop:
        gain, drive = affine_unit_terms(model, theta, increments, delta)
        out = gain * x_prev + drive
    else:
        out = np.asarray(x_prev, dtype=float)
        for k in range(increments.shape[-1]):
            out = out + model.drift(theta, out) * delta + model.diffusion(theta, out) * increments[..., k]
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("unit map produced a non-finite state")
    return out


@dataclass(frozen=True)
class LatentTrajectory:
    level: int
    grid: np.ndarray

    @property
    def skeleton(self) -> np.ndarray:
        m = fgn.steps_per_unit(self.level)
        return self.grid[..., m - 1 :: m]


def trajectory_map(model: ModelSpec, theta, path, level: int, x0=None) -> LatentTrajectory:
    """Run the Euler scheme along ``(..., T*m)`` increments, keeping every grid point."""
    theta = np.asarray(theta, dtype=float)
    path = np.asarray(path, dtype=float)
    delta = fgn.mesh(level)
    x = model.initial_state(theta) if x0 is None else x0
    x = np.broadcast_to(np.asarray(x, dtype=float), path.shape[:-1]).copy()
    grid = np.empty(path.shape)
    for k in range(path.shape[-1]):
        x = x + model.drift(theta, x) * delta + model.diffusion(theta, x) * path[..., k]
        grid[..., k] = x
    if not np.all(np.isfinite(grid)):
        raise NonFiniteState("trajectory contains non-finite states")
    return LatentTrajectory(level=level, grid=grid)


def skeleton_map(model: ModelSpec, theta, path, level: int, x0=None, exact_loop=False) -> np.ndarray:
    """States at unit times only, ``(..., T)``; same values as ``trajectory_map``."""
    theta = np.asarray(theta, dtype=float)
    path = np.asarray(path, dtype=float)
    m = fgn.steps_per_unit(level)
    delta = fgn.mesh(level)
    blocks = path.reshape(path.shape[:-1] + (-1, m))
    x = model.initial_state(theta) if x0 is None else x0
    x = np.broadcast_to(np.asarray(x, dtype=float), path.shape[:-1])
    out = np.empty(blocks.shape[:-1])
    for t in range(blocks.shape[-2]):
        x = unit_map(model, theta, x, blocks[..., t, :], delta, exact_loop=exact_loop)
        out[..., t] = x
    return out


def lamperti(model: ModelSpec) -> ModelSpec:
    """Transform to unit diffusion via ``eta(x) = int dx / sigma(x)``.

    fBM-driven equations obey the ordinary chain rule, so the new drift is
    ``a(x) / sigma(x)`` evaluated at ``x = eta^-1(state)`` with no correction
    term.  Constant-diffusion models reduce to dividing states by sigma.
    """
    if model.affine is not None:
        sig = lambda theta: model.affine(theta)[2]  # noqa: E731
        eta = lambda theta, x: x / sig(theta)  # noqa: E731
        eta_inv = lambda theta, e: sig(theta) * e  # noqa: E731
        a0_a1 = model.affine

        def affine(theta):
            a0, a1, s = a0_a1(theta)
            return a0 / s, a1, 1.0
    elif model.lamperti_pair is not None:
        eta, eta_inv = model.lamperti_pair
        affine = None
    else:
        raise UnsupportedDiffusion(f"model {model.name!r} has no registered Lamperti antiderivative")

    def drift(theta, e):
        x = eta_inv(theta, e)
        return model.drift(theta, x) / model.diffusion(theta, x)

    def diffusion(theta, e):
        return np.ones_like(np.asarray(e, dtype=float))

    def obs_logpdf(theta, y, e):
        return model.obs_logpdf(theta, y, eta_inv(theta, e))

    def obs_sample(theta, e, rng):
        return model.obs_sample(theta, eta_inv(theta, e), rng)

    def initial(theta):
        return eta(theta, model.initial_state(theta))

    return replace(
        model,
        name=f"{model.name}-lamperti",
        drift=drift,
        diffusion=diffusion,
        obs_logpdf=obs_logpdf,
        obs_sample=obs_sample,
        affine=affine,
        lamperti_pair=(lambda theta, e: e, lambda theta, e: e),
        initial=initial,
    )


def synth_generate(model: ModelSpec, theta, level: int, T: int, rng, method: str = "causal"):
    """Simulate ``(y_{1:T}, LatentTrajectory)`` from the level-``level`` scheme."""
    theta = np.asarray(theta, dtype=float)
    m = fgn.steps_per_unit(level)
    blocks = rng.standard_normal((T, 2 * m))
    path = fgn.full_path(model.hurst, blocks, level, method=method)
    traj = trajectory_map(model, theta, path, level)
    y = model.obs_sample(theta, traj.skeleton, rng)
    return np.asarray(y, dtype=float), traj


def param_vector(model: ModelSpec, values: Sequence[float] | dict) -> np.ndarray:
    if isinstance(values, dict):
        return np.array([float(values[name]) for name in model.param_names])
    return np.asarray(values, dtype=float)
