"""Experiment configuration read from an INI-style file.

Every key has a default, so an empty file (or no file) gives the simulated
OU set-up.  Sections and keys:

[model]      name, hurst, tau2, x0, plus one ``<param>`` key per model
             parameter holding the value used to simulate data
[prior]      ``<param>_shape`` and ``<param>_scale`` (Gamma priors)
[data]       T, csv (optional path with header ``t,y``), synth_level
[filter]     particles (0 means T), adaptive, ess_threshold
[mcmc]       level, iterations, step, burn_in, thin
[multilevel] l_min, l_max, epsilon, alpha, beta, gamma, base_m,
             iterations (optional explicit ``level:M`` list)
[study]      levels, repeats, single_base, multi_base, ref_level,
             ref_factor, ref_chains
[fgn]        hursts, level, samples, max_lag
[cost]       euler_steps, fft_ops, resample_ops, dense_ops (weights)
[run]        seed, out, workers, path_method
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .. import fgn
from ..errors import ConfigError
from ..ledger import DEFAULT_WEIGHTS, FIELDS
from ..sde import GammaPrior, MODELS, ModelSpec, make_model

PRESETS = {
    # simulated-data set-up
    "simulated": {
        "prior": {"theta_shape": 1.0, "theta_scale": 1.0, "sigma_shape": 0.5, "sigma_scale": 1.0},
    },
    # daily log-return set-up; data must be supplied through [data] csv
    "real": {
        "prior": {"theta_shape": 1e-3, "theta_scale": 1e-3, "sigma_shape": 1e-3, "sigma_scale": 1e-3},
    },
}


@dataclass
class ExperimentConfig:
    model: str = "ou"
    hurst: float = 0.4
    tau2: float = 0.2
    x0: float = 0.0
    true_params: dict = field(default_factory=lambda: {"theta": 1.0, "sigma": 0.5})
    priors: dict = field(default_factory=lambda: dict(PRESETS["simulated"]["prior"]))

    T: int = 100
    csv: Optional[Path] = None
    synth_level: int = 7

    particles: int = 0
    adaptive: bool = False
    ess_threshold: float = 0.5

    level: int = 7
    iterations: int = 2000
    step: float = 0.25
    burn_in: int = 0
    thin: int = 1

    l_min: int = 3
    l_max: int = 7
    epsilon: float = 0.1
    alpha: float = 0.5
    beta: float = 0.5
    gamma: float = 1.0
    base_m: float = 1.0
    ml_iterations: Optional[dict] = None

    study_levels: tuple = (3, 4, 5, 6)
    repeats: int = 20
    single_base: float = 16.0
    multi_base: Optional[float] = None  # None: matched to single_base at l_min
    ref_level: Optional[int] = None
    ref_factor: float = 10.0
    ref_chains: int = 4

    fgn_hursts: tuple = (0.2, 0.4, 0.6, 0.8)
    fgn_level: int = 10
    fgn_samples: int = 10000
    fgn_max_lag: int = 5

    cost_weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))

    seed: int = 0
    out: Path = Path("out")
    workers: int = 1
    path_method: str = "causal"

    @property
    def n_particles(self) -> int:
        return self.particles if self.particles > 0 else self.T

    def build_model(self) -> ModelSpec:
        factory = MODELS[self.model]
        probe = factory(hurst=self.hurst)
        priors = []
        for name in probe.param_names:
            try:
                priors.append(GammaPrior(float(self.priors[f"{name}_shape"]), float(self.priors[f"{name}_scale"])))
            except KeyError as exc:
                raise ConfigError(f"missing prior key {exc.args[0]}") from None
        return make_model(self.model, hurst=self.hurst, tau2=self.tau2, x0=self.x0, priors=tuple(priors))

    def true_theta(self, model: ModelSpec):
        try:
            return [float(self.true_params[name]) for name in model.param_names]
        except KeyError as exc:
            raise ConfigError(f"[model] needs a value for parameter {exc.args[0]}") from None

    def with_overrides(self, seed=None, out=None, workers=None) -> "ExperimentConfig":
        changes = {}
        if seed is not None:
            changes["seed"] = int(seed)
        if out is not None:
            changes["out"] = Path(out)
        if workers is not None:
            changes["workers"] = int(workers)
        cfg = replace(self, **changes)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.model in MODELS, f"unknown model {self.model!r}")
        need(0.0 < self.hurst < 1.0, "hurst must lie in (0, 1)")
        need(self.tau2 > 0, "tau2 must be positive")
        need(self.T >= 1, "T must be positive")
        need(self.csv is None or Path(self.csv).is_file(), f"data file {self.csv} does not exist")
        need(0 <= self.synth_level <= 12, "synth_level out of range")
        need(self.particles >= 0, "particles must be nonnegative")
        need(0.0 < self.ess_threshold <= 1.0, "ess_threshold must lie in (0, 1]")
        need(0 <= self.level <= 12, "level out of range")
        need(self.iterations >= 0, "iterations must be nonnegative")
        need(self.step > 0, "step must be positive")
        need(self.burn_in >= 0 and self.thin >= 1, "burn_in >= 0 and thin >= 1 required")
        need(0 <= self.l_min <= self.l_max <= 12, "need 0 <= l_min <= l_max <= 12")
        need(0.0 < self.epsilon < 1.0, "epsilon must lie in (0, 1)")
        need(self.alpha > 0 and self.beta > 0 and self.gamma >= 1, "need alpha > 0, beta > 0, gamma >= 1")
        need(self.base_m > 0, "base_m must be positive")
        if self.ml_iterations is not None:
            levels = sorted(self.ml_iterations)
            need(levels == list(range(levels[0], levels[-1] + 1)), "explicit multilevel iterations need contiguous levels")
            need(all(v >= 1 for v in self.ml_iterations.values()), "explicit iterations must be positive")
        need(len(self.study_levels) >= 1, "study needs at least one level")
        need(all(self.l_min <= l <= self.l_max for l in self.study_levels), "study levels must lie in [l_min, l_max]")
        need(self.repeats >= 1, "repeats must be positive")
        need(self.single_base > 0 and (self.multi_base is None or self.multi_base > 0), "study bases must be positive")
        need(self.ref_factor > 0 and self.ref_chains >= 1, "reference needs ref_factor > 0 and ref_chains >= 1")
        need(all(0.0 < h < 1.0 for h in self.fgn_hursts), "fgn hursts must lie in (0, 1)")
        need(1 <= self.fgn_level <= 16 and self.fgn_samples >= 2, "fgn level or samples out of range")
        need(self.fgn_max_lag >= 0, "max_lag must be nonnegative")
        need(self.workers >= 1, "workers must be positive")
        need(self.path_method in fgn.PATH_METHODS, f"path_method must be one of {fgn.PATH_METHODS}")
        need(all(w >= 0 for w in self.cost_weights.values()), "cost weights must be nonnegative")

    @property
    def study_multi_base(self) -> float:
        """Multilevel allocation constant of the study.

        By default it is chosen so that at ``L = l_min`` the allocation gives the
        single-level iteration count, so both methods coincide at the coarsest level.
        """
        if self.multi_base is not None:
            return self.multi_base
        return self.single_base * 2.0 ** (self.l_min * self.beta)

    @property
    def reference_level(self) -> int:
        return self.ref_level if self.ref_level is not None else max(self.study_levels) + 1


def _int_list(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _float_list(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _level_map(text):
    out = {}
    for item in text.replace(",", " ").split():
        level, _, count = item.partition(":")
        out[int(level)] = int(count)
    return out


# (section, key) -> (attribute, parser)
_SCHEMA = {
    ("model", "name"): ("model", str),
    ("model", "hurst"): ("hurst", float),
    ("model", "tau2"): ("tau2", float),
    ("model", "x0"): ("x0", float),
    ("data", "t"): ("T", int),
    ("data", "csv"): ("csv", Path),
    ("data", "synth_level"): ("synth_level", int),
    ("filter", "particles"): ("particles", int),
    ("filter", "adaptive"): ("adaptive", "bool"),
    ("filter", "ess_threshold"): ("ess_threshold", float),
    ("mcmc", "level"): ("level", int),
    ("mcmc", "iterations"): ("iterations", int),
    ("mcmc", "step"): ("step", float),
    ("mcmc", "burn_in"): ("burn_in", int),
    ("mcmc", "thin"): ("thin", int),
    ("multilevel", "l_min"): ("l_min", int),
    ("multilevel", "l_max"): ("l_max", int),
    ("multilevel", "epsilon"): ("epsilon", float),
    ("multilevel", "alpha"): ("alpha", float),
    ("multilevel", "beta"): ("beta", float),
    ("multilevel", "gamma"): ("gamma", float),
    ("multilevel", "base_m"): ("base_m", float),
    ("multilevel", "iterations"): ("ml_iterations", _level_map),
    ("study", "levels"): ("study_levels", _int_list),
    ("study", "repeats"): ("repeats", int),
    ("study", "single_base"): ("single_base", float),
    ("study", "multi_base"): ("multi_base", float),
    ("study", "ref_level"): ("ref_level", int),
    ("study", "ref_factor"): ("ref_factor", float),
    ("study", "ref_chains"): ("ref_chains", int),
    ("fgn", "hursts"): ("fgn_hursts", _float_list),
    ("fgn", "level"): ("fgn_level", int),
    ("fgn", "samples"): ("fgn_samples", int),
    ("fgn", "max_lag"): ("fgn_max_lag", int),
    ("run", "seed"): ("seed", int),
    ("run", "out"): ("out", Path),
    ("run", "workers"): ("workers", int),
    ("run", "path_method"): ("path_method", str),
}


def parse_config(text: str, base_dir: Path = Path(".")) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    cfg = ExperimentConfig()
    preset = parser.get("prior", "preset", fallback="simulated") if parser.has_section("prior") else "simulated"
    if preset not in PRESETS:
        raise ConfigError(f"unknown prior preset {preset!r}")
    cfg.priors = dict(PRESETS[preset]["prior"])
    known_sections = {s for s, _ in _SCHEMA} | {"prior", "cost"}
    for section in parser.sections():
        if section not in known_sections:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            try:
                if section == "prior":
                    if key != "preset":
                        cfg.priors[key] = float(raw)
                elif section == "cost":
                    if key not in FIELDS:
                        raise ConfigError(f"unknown cost weight {key!r}")
                    cfg.cost_weights[key] = float(raw)
                elif section == "model" and (section, key) not in _SCHEMA:
                    cfg.true_params[key] = float(raw)
                elif (section, key) in _SCHEMA:
                    attr, conv = _SCHEMA[(section, key)]
                    if conv == "bool":
                        value = parser.getboolean(section, key)
                    else:
                        value = conv(raw)
                    if attr == "csv" and not value.is_absolute():
                        value = base_dir / value
                    setattr(cfg, attr, value)
                else:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"bad value for [{section}] {key}: {exc}") from None
    cfg.validate()
    return cfg


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        cfg = ExperimentConfig()
        cfg.validate()
        return cfg
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, base_dir=path.parent)
