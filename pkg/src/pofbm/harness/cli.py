"""Command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .. import fgn
from ..errors import ConfigError, InsufficientPoints, InvalidRates, MissingLevel, NumericalError
from ..ledger import FIELDS
from ..pmcmc import write_chain_csv, write_noise_sidecar
from ..sde import synth_generate
from . import experiments as ex
from . import plots
from .config import ExperimentConfig, load_config
from .io import read_rows, write_observations, write_rows

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _write_cost(path, ledger):
    rows = [(name, getattr(ledger, name)) for name in FIELDS]
    rows.append(("total", ledger.total))
    return write_rows(path, ["field", "value"], rows)


def cmd_synth(cfg: ExperimentConfig, out: Path, log):
    model = cfg.build_model()
    theta = cfg.true_theta(model)
    y, traj = synth_generate(model, theta, cfg.synth_level, cfg.T, ex.rng_for(cfg.seed, "data"), method=cfg.path_method)
    write_observations(out / "data.csv", y)
    write_rows(out / "latent.csv", ["t", "x"], ((t, v) for t, v in enumerate(traj.skeleton, start=1)))
    log(f"wrote {cfg.T} observations to {out / 'data.csv'}")


def cmd_fgn_check(cfg: ExperimentConfig, out: Path, log):
    m = fgn.steps_per_unit(cfg.fgn_level)
    rows, spectrum = [], []
    for i, h in enumerate(cfg.fgn_hursts):
        eig = fgn.circulant_eigenvalues(h, m)
        tol = fgn.TOL_EIG * eig.max()
        spectrum.append((h, m, eig.min(), eig.max(), int(np.sum(eig < 0)), int(np.sum(eig < -tol))))
        fgn.build_embedding(h, m)
        mean, se = fgn.empirical_autocov(h, m, cfg.fgn_samples, ex.rng_for(cfg.seed, "fgn", i), cfg.fgn_max_lag)
        exact = fgn.fgn_autocov(h, np.arange(cfg.fgn_max_lag + 1))
        for k in range(cfg.fgn_max_lag + 1):
            z = (mean[k] - exact[k]) / se[k]
            rows.append((h, m, k, mean[k], exact[k], se[k], z))
        log(f"H={h}: max |z| = {np.max(np.abs((mean - exact) / se)):.2f}, min eigenvalue {eig.min():.3e}")
    write_rows(out / "fgn_check.csv", ["hurst", "m", "lag", "empirical", "exact", "se", "z"], rows)
    write_rows(out / "fgn_spectrum.csv", ["hurst", "m", "min_eigenvalue", "max_eigenvalue", "n_negative",
                                          "n_beyond_tolerance"], spectrum)


def cmd_pmcmc(cfg: ExperimentConfig, out: Path, log):
    obs = ex.load_observations(cfg)
    model = cfg.build_model()
    res = ex.run_single_level(cfg, obs.y)
    write_observations(out / "data.csv", obs.y)
    write_chain_csv(res.chain, out / "chain.csv", model.param_names)
    write_noise_sidecar(res.chain, out / "chain_noise.bin")
    est = res.estimate
    se = est.se if est.se is not None else np.full(est.fine.shape, np.nan)
    rows = [(name, res.params[j], res.params_uncorrected[j], se[j], est.ess_fine, cfg.level, cfg.iterations,
             res.chain.acceptance_rate) for j, name in enumerate(model.param_names)]
    write_rows(out / "pmcmc_estimate.csv", ["parameter", "corrected", "uncorrected", "se", "ess", "level",
                                            "iterations", "acceptance"], rows)
    header = ["t", "y", "x_corrected", "x_uncorrected"]
    cols = [np.arange(1, len(obs.y) + 1), obs.y, res.states, res.states_uncorrected]
    if obs.latent is not None:
        header.append("x_true")
        cols.append(obs.latent)
    write_rows(out / "states.csv", header, zip(*cols))
    _write_cost(out / "pmcmc_cost.csv", res.cost)
    plots.write_script(out)
    plots.render(out)
    for j, name in enumerate(model.param_names):
        log(f"{name}: corrected {res.params[j]:.4f} (se {se[j]:.4f}), uncorrected {res.params_uncorrected[j]:.4f}")
    log(f"acceptance {res.chain.acceptance_rate:.3f}, J0 ESS {est.ess_fine:.1f}")


def cmd_mlpmcmc(cfg: ExperimentConfig, out: Path, log):
    obs = ex.load_observations(cfg)
    model = cfg.build_model()
    res = ex.run_multilevel(cfg, obs.y)
    ml = res.estimate
    names = model.param_names
    level_rows = []
    for est in [ml.base] + ml.increments:
        se = est.se if est.se is not None else np.full(len(names), np.nan)
        coarse = est.coarse if est.coarse is not None else np.full(len(names), np.nan)
        for j, name in enumerate(names):
            level_rows.append((est.level, res.allocation.M[est.level], res.allocation.N[est.level], name,
                               est.fine[j], coarse[j], est.increment[j], se[j], est.ess_fine,
                               est.ess_coarse if est.ess_coarse is not None else float("nan"), est.cost.total))
        summary = res.summaries[est.level]
        header = ["record", "origin", "count", *names, "log_j_fine", "log_j_coarse",
                  *(f"phi_fine_{n}" for n in names), *(f"phi_coarse_{n}" for n in names)]
        rec_rows = []
        for i in range(len(summary.counts)):
            lc = summary.log_j_coarse[i] if summary.coupled else float("nan")
            pc = summary.phi_coarse[i] if summary.coupled else np.full(len(names), np.nan)
            rec_rows.append((i, summary.origins[i], summary.counts[i], *summary.thetas[i], summary.log_j_fine[i], lc,
                             *summary.phi_fine[i], *pc))
        write_rows(out / f"mlpmcmc_records_level_{est.level}.csv", header, rec_rows)
    write_rows(out / "mlpmcmc_levels.csv", ["level", "iterations", "particles", "parameter", "fine", "coarse",
                                            "increment", "se", "ess_fine", "ess_coarse", "cost"], level_rows)
    se = ml.se if ml.se is not None else np.full(len(names), np.nan)
    write_rows(out / "mlpmcmc_estimate.csv", ["parameter", "estimate", "se"],
               [(name, ml.total[j], se[j]) for j, name in enumerate(names)])
    write_observations(out / "data.csv", obs.y)
    _write_cost(out / "mlpmcmc_cost.csv", ml.cost)
    log(f"levels {ml.levels}, iterations {res.allocation.M}")
    for j, name in enumerate(names):
        log(f"{name}: {ml.total[j]:.4f} (se {se[j]:.4f})")


def cmd_study(cfg: ExperimentConfig, out: Path, log):
    obs = ex.load_observations(cfg)
    write_observations(out / "data.csv", obs.y)
    study = ex.mse_study(cfg, obs.y, progress=log)
    paths = plots.emit_plots(study, out)
    for row in read_rows(paths["rates"]):
        log(f"{row['method']:>6} {row['parameter']:>6}: slope {float(row['slope']):.3f}")


def cmd_rates(cfg: ExperimentConfig, out: Path, log):
    path = out / "study_summary.csv"
    if not path.is_file():
        raise ConfigError(f"{path} not found; run 'study' first")
    rows = plots.rates_rows(read_rows(path))
    write_rows(out / "rates.csv", plots.RATES_HEADER, rows)
    for row in rows:
        log(f"{row[0]:>6} {row[1]:>6}: slope {row[2]:.3f} (residual {row[4]:.3f})")


def cmd_plots(cfg: ExperimentConfig, out: Path, log):
    if not (out / "study_points.csv").is_file():
        raise ConfigError(f"{out / 'study_points.csv'} not found; run 'study' first")
    result = plots.emit_plots(plots.load_study(out), out)
    for p in result.get("figures", []):
        log(f"wrote {p}")


COMMANDS = {
    "synth": (cmd_synth, "simulate observations from the configured model"),
    "fgn-check": (cmd_fgn_check, "autocovariance and spectrum diagnostics of the block sampler"),
    "pmcmc": (cmd_pmcmc, "single-level PMMH with the base correction"),
    "mlpmcmc": (cmd_mlpmcmc, "multilevel PMMH estimate"),
    "study": (cmd_study, "cost versus MSE study for both methods"),
    "rates": (cmd_rates, "refit rates from a completed study"),
    "plots": (cmd_plots, "redraw figures and tables from a completed study"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pofbm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None, help="INI configuration file")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides [run] seed)")
        p.add_argument("--out", type=Path, default=None, help="output directory (overrides [run] out)")
        p.add_argument("--workers", type=int, default=None, help="worker processes (overrides [run] workers)")
        p.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    log = (lambda msg: None) if args.quiet else (lambda msg: print(msg, flush=True))
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("seed must be nonnegative")
        cfg = load_config(args.config).with_overrides(seed=args.seed, out=args.out, workers=args.workers)
        cfg.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command][0](cfg, cfg.out, log)
    except (ConfigError, InsufficientPoints, InvalidRates, MissingLevel) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
