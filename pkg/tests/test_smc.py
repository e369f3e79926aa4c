import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from realrech import models, smc
from realrech.smc import (
    DegeneracyError, DensityTarget, ParticleSystem, SmcConfig, VolatilityTarget, adapt_next_gamma,
    data_anneal, data_anneal_step, ess, likelihood_anneal, mh_refresh, normalized_weights,
    resample_systematic, systematic_indices,
)
from oracles import ConjugateNormalMean


def _system(theta, lw=None, ll=None, gamma=0.0, seed=0):
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    m = theta.shape[0]
    return ParticleSystem(theta, np.zeros(m) if lw is None else np.asarray(lw, float),
                          np.zeros(m) if ll is None else np.asarray(ll, float), gamma, 0.0, seed)


# ---------------------------------------------------------------------------
# weights and ESS
# ---------------------------------------------------------------------------

def test_ess_extremes():
    assert ess(np.zeros(10)) == pytest.approx(10)
    assert ess(np.array([0.0] + [-np.inf] * 9)) == pytest.approx(1)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=40))
@settings(max_examples=100, deadline=None)
def test_ess_bounds(lw):
    e = ess(np.array(lw))
    assert 1 - 1e-9 <= e <= len(lw) + 1e-9
    w = normalized_weights(np.array(lw))
    assert w.sum() == pytest.approx(1.0)


def test_all_zero_weights_degenerate():
    with pytest.raises(DegeneracyError):
        normalized_weights(np.full(3, -np.inf))


# ---------------------------------------------------------------------------
# adaptive temperature
# ---------------------------------------------------------------------------

def test_two_particle_gamma_closed_form():
    # weights (1, x) give ESS (1 + x)^2 / (1 + x^2); x = 3 gives 1.6 = 0.8 * 2
    g = 10.0
    system = _system([[0.0], [1.0]], ll=[0.0, g])
    gamma = adapt_next_gamma(system, system.loglik, 0.8)
    assert gamma == pytest.approx(math.log(3) / g, abs=1e-12)


def test_gamma_jumps_to_one_when_ess_allows():
    system = _system([[0.0], [1.0]], ll=[0.0, 0.1])
    assert adapt_next_gamma(system, system.loglik, 0.8) == 1.0


@given(st.lists(st.floats(-200, 0), min_size=5, max_size=30), st.floats(0.3, 0.95))
@settings(max_examples=60, deadline=None)
def test_gamma_hits_target_ess(ll, frac):
    ll = np.array(ll)
    system = _system(np.zeros((ll.size, 1)), ll=ll)
    gamma = adapt_next_gamma(system, ll, frac)
    assert 0 < gamma <= 1
    e = ess(gamma * ll)
    if gamma < 1:
        assert e == pytest.approx(frac * ll.size, rel=1e-6)
    else:
        assert e >= frac * ll.size - 1e-9


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def test_systematic_counts_exact():
    for seed in range(20):
        idx = systematic_indices([0.75, 0.25, 0.0, 0.0], np.random.default_rng(seed))
        assert np.bincount(idx, minlength=4).tolist() == [3, 1, 0, 0]


@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=50), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=100, deadline=None)
def test_systematic_counts_within_one(w, seed):
    w = np.array(w) / np.sum(w)
    counts = np.bincount(systematic_indices(w, np.random.default_rng(seed)), minlength=w.size)
    assert counts.sum() == w.size
    assert np.all(np.abs(counts - w * w.size) < 1 + 1e-9)


def test_resample_resets_weights_and_keeps_pairs():
    theta = np.arange(5.0)[:, None]
    system = _system(theta, lw=np.log([0.1, 0.2, 0.3, 0.2, 0.2]), ll=np.arange(5.0) * 10)
    out = resample_systematic(system, np.random.default_rng(0))
    np.testing.assert_array_equal(out.log_weights, 0.0)
    np.testing.assert_array_equal(out.loglik, out.theta[:, 0] * 10)


# ---------------------------------------------------------------------------
# MH move kernel
# ---------------------------------------------------------------------------

def test_mh_preserves_standard_normal():
    target = DensityTarget(lambda th: -0.5 * np.sum(th ** 2, axis=1), 2)
    rng = np.random.default_rng(0)
    theta = rng.standard_normal((4000, 2))
    system = _system(theta, ll=target.loglik(theta), gamma=1.0, seed=3)
    out = mh_refresh(system, target, SmcConfig(n_particles=4000, n_mh_moves=20, seed=3))
    assert np.abs(out.theta.mean(axis=0)).max() < 0.1
    np.testing.assert_allclose(out.theta.var(axis=0), 1.0, atol=0.1)
    assert 0.2 < out.stage_log[-1]["acceptance"] < 0.8


def test_mh_zero_scale_is_identity():
    target = DensityTarget(lambda th: -0.5 * np.sum(th ** 2, axis=1), 1)
    system = _system(np.random.default_rng(0).standard_normal((50, 1)), gamma=1.0)
    out = mh_refresh(system, target, SmcConfig(n_particles=50, proposal_scale=0.0))
    np.testing.assert_array_equal(out.theta, system.theta)


def test_mh_record_acceptance_rule():
    target = DensityTarget(lambda th: -0.5 * np.sum(th ** 2, axis=1), 1)
    theta = np.linspace(-2, 2, 200)[:, None]
    system = _system(theta, ll=target.loglik(theta), gamma=1.0)
    rec = []
    mh_refresh(system, target, SmcConfig(n_particles=200, n_mh_moves=3), record=rec)
    assert len(rec) == 3
    for cur, new, acc in rec:
        # a proposal is never accepted when it is impossible, always when it improves
        assert not np.any(acc & ~np.isfinite(new))
        assert np.all(acc[new > cur])


# ---------------------------------------------------------------------------
# likelihood annealing
# ---------------------------------------------------------------------------

def test_conjugate_log_evidence_single_seed():
    rng = np.random.default_rng(1)
    target = ConjugateNormalMean(rng.normal(0.7, 1.0, 50))
    system = likelihood_anneal(target, SmcConfig(n_particles=1000, seed=5))
    assert system.log_ml == pytest.approx(target.log_evidence(), abs=0.15)
    mean, sd = target.posterior()
    assert system.mean()[0] == pytest.approx(mean, abs=4 * sd / math.sqrt(200))
    assert system.std()[0] == pytest.approx(sd, rel=0.15)
    gammas = [s["gamma"] for s in system.stage_log]
    assert gammas == sorted(gammas) and gammas[-1] == 1.0


def test_oracle_evidence_matches_dense_formula():
    from scipy.stats import multivariate_normal
    y = np.random.default_rng(2).normal(size=6)
    t = ConjugateNormalMean(y, s=1.3, m0=0.2, v0=2.0)
    cov = 1.3 ** 2 * np.eye(6) + 2.0
    assert t.log_evidence() == pytest.approx(multivariate_normal(np.full(6, 0.2), cov).logpdf(y), abs=1e-12)


def test_likelihood_anneal_deterministic():
    y = np.random.default_rng(0).normal(size=30)
    a = likelihood_anneal(ConjugateNormalMean(y), SmcConfig(n_particles=200, seed=9))
    b = likelihood_anneal(ConjugateNormalMean(y), SmcConfig(n_particles=200, seed=9))
    np.testing.assert_array_equal(a.theta, b.theta)
    assert a.log_ml == b.log_ml


def test_garch_posterior_short_run():
    rng = np.random.default_rng(11)
    y, _, _ = models.simulate("garch", models.default_params("garch"), 1000, rng)
    target = VolatilityTarget("garch", y)
    system = likelihood_anneal(target, SmcConfig(n_particles=400, seed=1))
    truth = np.array([0.05, 0.1, 0.85])
    assert np.all(np.abs(system.mean() - truth) < 4 * system.std() + 0.02)
    assert np.isfinite(system.log_ml)


# ---------------------------------------------------------------------------
# data annealing
# ---------------------------------------------------------------------------

def test_incremental_loglik_equals_full_filter():
    rng = np.random.default_rng(3)
    y, rv, _ = models.simulate("realrech", models.default_params("realrech"), 60, rng)
    target = VolatilityTarget("realrech", y[:40], rv[:40])
    theta = target.sample_prior(np.random.default_rng(0), 30)
    system = _system(theta, ll=target.loglik(theta), gamma=1.0)
    system.model_id = "realrech"
    system = smc.ensure_state(system, target)
    inc, _, _ = smc.incremental_loglik(system, y[40], rv[40])
    full = VolatilityTarget("realrech", y[:41], rv[:41], target.sigma2_init).loglik(theta)
    ok = np.isfinite(full)
    np.testing.assert_allclose(system.loglik[ok] + inc[ok], full[ok], rtol=1e-12)


def test_data_anneal_step_reweights_without_resampling():
    y = np.random.default_rng(4).normal(size=21)
    target = VolatilityTarget("garch", y[:20])
    theta = target.sample_prior(np.random.default_rng(1), 100)
    system = ParticleSystem(theta, np.zeros(100), target.loglik(theta), 1.0, 0.0, 0, 0, "garch", 20)
    cfg = SmcConfig(n_particles=100, ess_resample_fraction=0.01)
    out, new_target = data_anneal_step(system, target, y[20], None, cfg)
    expected = VolatilityTarget("garch", y, sigma2_init=target.sigma2_init).loglik(theta)
    np.testing.assert_allclose(out.log_weights, expected - system.loglik, rtol=1e-12)
    np.testing.assert_array_equal(out.theta, theta)
    assert new_target.y.size == 21 and out.n_obs == 21


def test_data_anneal_evidence_matches_likelihood_anneal():
    # the sequential evidence telescopes to the same marginal likelihood
    y, _, _ = models.simulate("garch", models.default_params("garch"), 150, np.random.default_rng(5))
    s2 = float(np.var(y))
    cfg = SmcConfig(n_particles=1000, seed=0)
    la = likelihood_anneal(VolatilityTarget("garch", y, sigma2_init=s2), cfg)
    da, _ = data_anneal(VolatilityTarget("garch", y[:0], sigma2_init=s2), y, None, cfg)
    assert da.log_ml == pytest.approx(la.log_ml, abs=0.3)


def test_data_anneal_garch_resamples_and_moves():
    rng = np.random.default_rng(5)
    y, _, _ = models.simulate("garch", models.default_params("garch"), 150, rng)
    target = VolatilityTarget("garch", y[:0], sigma2_init=float(np.var(y)))
    system, tgt = data_anneal(target, y, None, SmcConfig(n_particles=300, seed=4))
    assert tgt.y.size == 150 and system.n_obs == 150
    assert any(s["resampled"] for s in system.stage_log)
    assert np.isfinite(system.log_ml)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_particle_system_roundtrip(tmp_path):
    y = np.random.default_rng(0).normal(size=50)
    target = VolatilityTarget("rech", y)
    system = likelihood_anneal(target, SmcConfig(n_particles=100, n_mh_moves=2, seed=1))
    system = smc.ensure_state(system, target)
    system.save(tmp_path / "p.json")
    back = ParticleSystem.load(tmp_path / "p.json")
    np.testing.assert_array_equal(back.theta, system.theta)
    np.testing.assert_array_equal(back.loglik, system.loglik)
    np.testing.assert_array_equal(back.state.sigma2, system.state.sigma2)
    np.testing.assert_array_equal(back.state.bad, system.state.bad)
    assert back.log_ml == system.log_ml and back.model_id == "rech"


@pytest.mark.parametrize("kw", [dict(n_particles=1), dict(ess_target_fraction=1.0),
                                dict(n_mh_moves=0), dict(proposal_scale=-1.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SmcConfig(**kw)
