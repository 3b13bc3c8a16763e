import math

import numpy as np
import pytest
from scipy import stats

from cmgipd.data import center_covariates, from_arrays
from cmgipd.diagnostics import (DiagnosticError, deviance_draws, dic, gelman_rubin,
                                log_likelihood)
from cmgipd.priors import PriorMethod
from cmgipd.sampler import ChainConfig, ModelSpec, ParameterState, run_mcmc
from cmgipd.simulation import ScenarioSpec, generate_dataset

from conftest import simulate_simple


def _rhat_oracle(x):
    """Textbook split-R-hat written out independently."""
    n = x.shape[1] // 2
    chains = [c[:n] for c in x] + [c[-n:] for c in x]
    means = [np.mean(c) for c in chains]
    W = np.mean([np.var(c, ddof=1) for c in chains])
    B = n * np.var(means, ddof=1)
    return math.sqrt(((n - 1) / n * W + B / n) / W)


def test_rhat_identical_iid_chains():
    z = np.random.default_rng(0).standard_normal(2000)
    assert gelman_rubin(np.vstack([z, z])) == pytest.approx(1.0, abs=0.05)


def test_rhat_separated_chains():
    rng = np.random.default_rng(1)
    x = np.vstack([rng.standard_normal(500), 10 + rng.standard_normal(500)])
    r = gelman_rubin(x)
    assert r > 1.5
    assert r == pytest.approx(_rhat_oracle(x), rel=1e-12)


def test_rhat_errors():
    with pytest.raises(DiagnosticError):
        gelman_rubin(np.zeros((1, 100)))
    with pytest.raises(DiagnosticError):
        gelman_rubin(np.ones((2, 100)))
    with pytest.raises(DiagnosticError):
        gelman_rubin(np.zeros((2, 5)))


def _toy3():
    y = np.array([1.0, 2.5, -0.5])
    t = np.array([0.0, 1.0, 1.0])
    X = np.array([[0.2], [-0.1], [0.4]])
    data = from_arrays(y, t, X, ["a"] * 3)
    st = ParameterState(mu=0.3, alpha=1.1, beta=np.array([0.7]), gamma=np.array([-0.4]),
                        sigma2=np.array([1.7]), u_mu=np.array([0.2]),
                        u_alpha=np.array([-0.3]), u=np.array([[0.5]]))
    return data, st


def test_log_likelihood_brute_force():
    data, st = _toy3()
    total = 0.0
    for yj, tj, xj in zip(data.y, data.t, data.X[:, 0]):
        mean = 0.3 + 0.2 + tj * (1.1 - 0.3) + 0.7 * xj + tj * xj * (-0.4 + 0.5)
        total += stats.norm.logpdf(yj, mean, math.sqrt(1.7))
    assert log_likelihood(st, data, ModelSpec(PriorMethod("Flat"))) == pytest.approx(total,
                                                                                    abs=1e-12)


def test_log_likelihood_zero_residual_and_scale():
    data, st = _toy3()
    spec = ModelSpec(PriorMethod("Flat"))
    st.sigma2 = np.array([1.0])
    t, x = data.t, data.X[:, 0]
    fit = 0.5 + t * 0.8 + 0.7 * x + t * x * 0.1
    exact = from_arrays(fit, t, data.X, ["a"] * 3)
    ll1 = log_likelihood(st, exact, spec)
    assert ll1 == pytest.approx(-1.5 * math.log(2 * math.pi), abs=1e-12)
    st.sigma2 = np.array([2.0])
    assert log_likelihood(st, exact, spec) == pytest.approx(ll1 - 1.5 * math.log(2), abs=1e-12)


def test_quadratic_form_deviance_matches_direct_route():
    data = simulate_simple(seed=2)
    spec = ModelSpec(PriorMethod.parse("CMG-S2-n"))
    dr = run_mcmc(data, spec, ChainConfig(1, 60, 20, 4, seed=0))
    D = deviance_draws(dr, data, spec)
    for s in range(dr.n_draws):
        direct = -2 * log_likelihood(dr.state_at(0, s), data, spec)
        assert D[0, s] == pytest.approx(direct, rel=1e-9)


def test_dic_parts_and_positive_pd():
    data = simulate_simple(seed=3, gamma=[0.5, 0.0, 0.0])
    spec = ModelSpec(PriorMethod("Flat"), include_moderator_random_effects=False)
    dr = run_mcmc(data, spec, ChainConfig(1, 2000, 500, 2, seed=1))
    parts = dic(dr, data, spec, return_parts=True)
    assert parts["p_d"] > 0
    assert parts["dic"] == pytest.approx(parts["d_bar"] + parts["p_d"])
    assert math.isfinite(parts["dic"])


def test_dic_prefers_no_moderator_random_effects_when_none_exist():
    wins = 0
    sc = ScenarioSpec("None", "High", "Strong", "None", 5)
    cfg = ChainConfig(1, 1500, 500, 2, seed=4)
    for r in range(5):
        raw, _ = generate_dataset(sc, [99, r])
        data = center_covariates(raw)
        m = PriorMethod("Flat")
        d_with = dic(run_mcmc(data, ModelSpec(m), cfg), data, ModelSpec(m))
        spec0 = ModelSpec(m, include_moderator_random_effects=False)
        d_without = dic(run_mcmc(data, spec0, cfg), data, spec0)
        wins += d_without < d_with
    assert wins >= 3


def test_noise_moderator_does_not_improve_dic_much():
    data = simulate_simple(seed=5, p=3, gamma=[0.8, 0.0, 0.0])
    cfg = ChainConfig(1, 2000, 500, 2, seed=5)
    m = PriorMethod("Flat")
    full = ModelSpec(m, include_moderator_random_effects=False)
    red = ModelSpec(m, include_moderator_random_effects=False, moderators=("x1",))
    d_full = dic(run_mcmc(data, full, cfg), data, full)
    d_red = dic(run_mcmc(data, red, cfg), data, red)
    assert d_full > d_red - 4.0
