import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pofbm import pmcmc, sde
from pofbm.errors import DegenerateWeights
from pofbm.harness.io import read_rows


@pytest.fixture
def data():
    model = sde.ou_model()
    y, _ = sde.synth_generate(model, [1.0, 0.5], 3, 5, np.random.default_rng(0))
    return model, y


@given(st.lists(st.floats(0.01, 10), min_size=2, max_size=2), st.integers(0, 2**31))
def test_proposal_stays_positive_and_jacobian_is_log_ratio(theta, seed):
    rng = np.random.default_rng(seed)
    new = pmcmc.propose(theta, 0.25, rng)
    assert np.all(new > 0)
    assert pmcmc.log_jacobian(new, theta) == pytest.approx(np.sum(np.log(new) - np.log(theta)))


def test_accept_ratio_capped():
    assert pmcmc.accept_log_ratio(5.0, 0.0, 0.0, 0.0) == 0.0
    assert pmcmc.accept_log_ratio(-1.0, -0.5, 0.0, 0.0, 0.25) == pytest.approx(-1.25)


def test_zero_iterations_gives_initial_record(data):
    model, y = data
    chain = pmcmc.pmmh_single(model, 3, 10, 0, y, np.random.default_rng(1))
    assert len(chain.records) == 1
    assert chain.records[0].origin == 0
    assert np.isnan(chain.acceptance_rate)


def test_rejections_repeat_the_previous_record(data):
    model, y = data
    chain = pmcmc.pmmh_single(model, 3, 10, 60, y, np.random.default_rng(2))
    assert len(chain.records) == 61
    assert 0 < chain.n_accepted < 60
    for prev, rec in zip(chain.records, chain.records[1:]):
        if rec.accepted:
            assert rec.origin == chain.records.index(rec)
        else:
            assert rec.origin == prev.origin
            assert rec.theta is prev.theta and rec.noise is prev.noise and rec.log_c == prev.log_c


def test_chain_reproducible(data):
    model, y = data
    a = pmcmc.pmmh_coupled(model, 3, 8, 20, y, np.random.default_rng(3))
    b = pmcmc.pmmh_coupled(model, 3, 8, 20, y, np.random.default_rng(3))
    np.testing.assert_array_equal(a.thetas, b.thetas)
    np.testing.assert_array_equal(a.log_cs, b.log_cs)
    assert a.ledger.as_dict() == b.ledger.as_dict()


def test_coupled_chain_needs_coarse_level(data):
    model, y = data
    with pytest.raises(ValueError):
        pmcmc.pmmh_coupled(model, 0, 8, 2, y, np.random.default_rng(3))


def test_initialisation_gives_up_after_max_tries(data):
    model, y = data
    bad = dataclasses.replace(model, obs_logpdf=lambda th, y, x: np.full(np.shape(x), -np.inf))
    with pytest.raises(DegenerateWeights):
        pmcmc.pmmh_single(bad, 2, 5, 3, y, np.random.default_rng(4), max_init_tries=3)


def test_chain_csv_round_trip(data, tmp_path):
    model, y = data
    chain = pmcmc.pmmh_single(model, 2, 5, 10, y, np.random.default_rng(5))
    path = tmp_path / "chain.csv"
    pmcmc.write_chain_csv(chain, path, model.param_names)
    rows = read_rows(path)
    assert list(rows[0]) == ["iteration", "theta", "sigma", "log_c", "accepted"]
    assert np.array_equal([float(r["theta"]) for r in rows], chain.thetas[:, 0])
    assert np.array_equal([float(r["log_c"]) for r in rows], chain.log_cs)


def test_noise_sidecar_round_trip(data, tmp_path):
    model, y = data
    chain = pmcmc.pmmh_single(model, 2, 5, 10, y, np.random.default_rng(6))
    path = tmp_path / "noise.bin"
    pmcmc.write_noise_sidecar(chain, path)
    level, noise = pmcmc.read_noise_sidecar(path)
    assert level == 2
    assert noise.shape == (11, 5, 8)
    for rec, got in zip(chain.records, noise):
        np.testing.assert_array_equal(rec.noise, got)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        pmcmc.read_noise_sidecar(path)


def test_overflowing_candidate_is_rejected(data):
    model, y = data
    chain = pmcmc.pmmh_single(model, 3, 5, 30, y, np.random.default_rng(8), step=8.0)
    assert len(chain.records) == 31
    assert all(np.isfinite(r.log_c) for r in chain.records)
