import math
from pathlib import Path

import numpy as np
import pytest

from pofbm.errors import ConfigError, InsufficientPoints, MalformedCSV, NonContiguousTime
from pofbm.harness import experiments as ex
from pofbm.harness import plots
from pofbm.harness.cli import main
from pofbm.harness.config import ExperimentConfig, load_config, parse_config
from pofbm.harness.io import ingest_csv, read_rows, write_observations
from pofbm.sde import synth_generate

GOLDEN = Path(__file__).parent / "golden" / "csv_schema.txt"

SMALL = """
[data]
T = 8
synth_level = 4
[mcmc]
level = 3
iterations = 30
[multilevel]
l_min = 2
l_max = 4
epsilon = 0.25
[study]
levels = 2 3 4
repeats = 2
single_base = 2
multi_base = 4
ref_factor = 1
ref_chains = 2
[fgn]
level = 5
samples = 100
max_lag = 2
"""


@pytest.fixture
def small_cfg():
    return parse_config(SMALL)


@pytest.fixture
def small_ini(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL)
    return path


def test_defaults_follow_simulated_setup():
    cfg = load_config()
    assert (cfg.hurst, cfg.tau2, cfg.T, cfg.level) == (0.4, 0.2, 100, 7)
    assert (cfg.l_min, cfg.l_max) == (3, 7)
    assert (cfg.alpha, cfg.beta, cfg.gamma) == (0.5, 0.5, 1.0)
    model = cfg.build_model()
    assert model.priors[1].shape == 0.5 and model.priors[0].shape == 1.0
    assert cfg.n_particles == cfg.T


def test_real_preset_priors():
    cfg = parse_config("[prior]\npreset = real\n")
    assert cfg.build_model().priors[0].shape == 1e-3


def test_config_overrides_and_parsing(tmp_path):
    cfg = parse_config("[model]\ntheta = 2.5\n[multilevel]\niterations = 3:10, 4:5\n[cost]\ndense_ops = 1\n")
    assert cfg.true_params["theta"] == 2.5
    assert cfg.ml_iterations == {3: 10, 4: 5}
    assert cfg.cost_weights["dense_ops"] == 1.0
    cfg2 = cfg.with_overrides(seed=9, out=tmp_path, workers=2)
    assert (cfg2.seed, cfg2.out, cfg2.workers) == (9, tmp_path, 2)


@pytest.mark.parametrize("text", [
    "[model]\nhurst = 1.5\n", "[nonsense]\na = 1\n", "[mcmc]\nlevel = x\n", "[mcmc]\nwhat = 1\n",
    "[data]\ncsv = missing.csv\n", "[multilevel]\nl_min = 5\nl_max = 4\n", "[run]\npath_method = magic\n",
    "[multilevel]\niterations = 3:10, 5:5\n", "[cost]\nbogus = 1\n", "not an ini",
])
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")


def test_ingest_small_file(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("t,y\n1,0.5\n2,-1.25\n3,2\n")
    np.testing.assert_array_equal(ingest_csv(p), [0.5, -1.25, 2.0])


@pytest.mark.parametrize("body,err", [
    ("t,y\n1,0.5\n3,1.0\n", NonContiguousTime),
    ("t,y\n2,0.5\n", NonContiguousTime),
    ("time,y\n1,0.5\n", MalformedCSV),
    ("t,y\n1,abc\n", MalformedCSV),
    ("t,y\n1,0.5,3\n", MalformedCSV),
    ("t,y\n", MalformedCSV),
    ("", MalformedCSV),
])
def test_ingest_errors(tmp_path, body, err):
    p = tmp_path / "d.csv"
    p.write_text(body)
    with pytest.raises(err):
        ingest_csv(p)


def test_ingest_round_trip_bit_exact(tmp_path, small_cfg):
    model = small_cfg.build_model()
    y, _ = synth_generate(model, [1.0, 0.5], 4, 20, np.random.default_rng(3))
    p = write_observations(tmp_path / "y.csv", y)
    np.testing.assert_array_equal(ingest_csv(p), y)


def test_rng_streams_are_addressed():
    a = ex.rng_for(1, "single", 3).standard_normal(3)
    b = ex.rng_for(1, "single", 3).standard_normal(3)
    c = ex.rng_for(1, "single", 4).standard_normal(3)
    d = ex.rng_for(2, "single", 3).standard_normal(3)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)


def test_fit_rate_exact_line():
    mse = np.array([1e-1, 1e-2, 1e-3, 1e-4])
    fit = ex.fit_rate(mse, 7.0 * mse**-1.5)
    assert fit.slope == pytest.approx(-1.5, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(7.0), abs=1e-10)
    assert fit.residual < 1e-12


def test_fit_rate_needs_three_points():
    with pytest.raises(InsufficientPoints):
        ex.fit_rate([0.1, 0.01], [1.0, 10.0])


def test_mse_decomposition():
    ref = ex.Reference(5, 10, 1, np.array([1.0, 0.5]), np.array([0.0, 0.0]))
    pts = [ex.StudyPoint("single", 3, r, np.array([1.0 + 0.1 * r, 0.5 - 0.05 * r]), 100.0, {}) for r in range(5)]
    study = ex.StudyResult(("theta", "sigma"), ref, pts)
    for method, level, name, mse, var, bias2, cost, n in study.summary():
        j = 0 if name == "theta" else 1
        est = np.array([p.estimate[j] for p in pts])
        assert mse == pytest.approx(np.mean((est - ref.value[j]) ** 2), rel=1e-12)
        assert mse == pytest.approx(var + bias2, rel=1e-12)


def test_single_level_zero_iterations(small_cfg):
    cfg = small_cfg.with_overrides()
    cfg.iterations = 0
    y = ex.load_observations(cfg).y
    res = ex.run_single_level(cfg, y)
    assert len(res.chain.records) == 1
    assert res.estimate.n_records == 1
    np.testing.assert_array_equal(res.params_uncorrected, res.chain.records[0].theta)
    assert res.states.shape == (cfg.T,)


def test_single_level_reproducible_ledger(small_cfg):
    y = ex.load_observations(small_cfg).y
    a = ex.run_single_level(small_cfg, y)
    b = ex.run_single_level(small_cfg, y)
    np.testing.assert_array_equal(a.estimate.fine, b.estimate.fine)
    assert a.cost.as_dict() == b.cost.as_dict()


def test_multilevel_ledger_is_sum_of_levels(small_cfg):
    y = ex.load_observations(small_cfg).y
    res = ex.run_multilevel(small_cfg, y)
    assert res.allocation.levels == [2, 3, 4]
    parts = [res.estimate.base] + res.estimate.increments
    assert res.estimate.cost.euler_steps == sum(p.cost.euler_steps for p in parts)
    assert res.estimate.cost.total == pytest.approx(sum(p.cost.total for p in parts))
    np.testing.assert_allclose(res.estimate.total, parts[0].fine + sum(p.increment for p in parts[1:]))


def test_multilevel_single_level_limit(small_cfg):
    y = ex.load_observations(small_cfg).y
    alloc = ex.multilevel_allocation(small_cfg, epsilon=0.5, l_max=2)
    assert alloc.levels == [2]
    res = ex.run_multilevel(small_cfg, y, allocation=alloc)
    np.testing.assert_array_equal(res.estimate.total, res.estimate.base.fine)
    assert res.estimate.increments == []


def test_workers_do_not_change_results(small_cfg):
    y = ex.load_observations(small_cfg).y
    a = ex.run_multilevel(small_cfg, y, workers=1)
    b = ex.run_multilevel(small_cfg, y, workers=2)
    np.testing.assert_array_equal(a.estimate.total, b.estimate.total)


def test_empty_study_writes_headers_only(tmp_path):
    out = plots.emit_plots(ex.StudyResult(("theta", "sigma"), None, []), tmp_path)
    assert "script" not in out
    assert not (tmp_path / plots.SCRIPT_NAME).exists()
    for key in ("points", "summary", "reference", "rates"):
        assert len(out[key].read_text().splitlines()) == 1


def _schema(directory):
    lines = []
    for p in sorted(Path(directory).glob("*.csv")):
        lines.append(f"{p.name}: {p.read_text().splitlines()[0]}")
    return lines


def test_csv_schema_matches_golden(tmp_path, small_ini):
    for cmd in ("synth", "fgn-check", "pmcmc", "mlpmcmc", "study"):
        assert main([cmd, "--config", str(small_ini), "--out", str(tmp_path), "--seed", "1", "--quiet"]) == 0
    got = _schema(tmp_path)
    assert got == GOLDEN.read_text().splitlines()


def test_study_outputs_and_plots_deterministic(tmp_path, small_ini):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["study", "--config", str(small_ini), "--out", str(d), "--seed", "4", "--quiet"]) == 0
    for name in ("study_points.csv", "study_summary.csv", "reference.csv", "rates.csv", plots.SCRIPT_NAME):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert sorted(p.name for p in a.glob("*.png")) == ["cost_vs_mse_sigma.png", "cost_vs_mse_theta.png"]
    rows = read_rows(a / "rates.csv")
    assert {(r["method"], r["parameter"]) for r in rows} == {
        ("single", "theta"), ("single", "sigma"), ("multi", "theta"), ("multi", "sigma")}
    # plots reproduces the tables from the points file
    summary = (a / "study_summary.csv").read_bytes()
    assert main(["plots", "--out", str(a), "--quiet"]) == 0
    assert (a / "study_summary.csv").read_bytes() == summary
    assert main(["rates", "--out", str(a), "--quiet"]) == 0


def test_exit_codes(tmp_path, small_ini):
    bad = tmp_path / "bad.ini"
    bad.write_text("[model]\nhurst = 2\n")
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["synth", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path)]) == 2
    assert main(["rates", "--out", str(tmp_path / "empty")]) == 2
    assert main(["bogus-command"]) == 2
    degenerate = tmp_path / "degenerate.ini"
    degenerate.write_text(SMALL + "\n[model]\ntau2 = 1e-320\n")
    assert main(["pmcmc", "--config", str(degenerate), "--out", str(tmp_path / "d"), "--quiet"]) == 3


def test_study_methods_coincide_at_coarsest_level():
    cfg = ExperimentConfig(T=50)
    lm = cfg.l_min
    assert ex.study_allocation(cfg, lm).M == {lm: ex.single_iterations(cfg, lm)}
    assert ExperimentConfig(multi_base=3.0).study_multi_base == 3.0
