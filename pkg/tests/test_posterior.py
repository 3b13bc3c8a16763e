import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate, stats

from cmgipd.posterior import (DegeneratePosteriorError, PosteriorSummary, density_export,
                              flag_moderators, prior_density_export, scaled_neighborhood_prob,
                              summarize, tuning_curves)
from cmgipd.priors import PriorMethod, UnsupportedMethodError
from cmgipd.sampler import ChainConfig, ModelSpec, PosteriorDraws, run_mcmc

from conftest import simulate_simple

MDD = ["sex", "age", "smoking", "weight", "madrs", "hama", "DM", "hypothyroidism",
       "anxiety", "antidepressant", "antipsychotic", "thyroid_med"]
FLAT_P = [0.68, 0.20, 0.58, 0.66, 0.53, 0.64, 0.38, 0.68, 0.40, 0.30, 0.65, 0.68]


def _fake_draws(values, name="gamma", labels=("x1",)):
    arr = np.asarray(values, float).reshape(1, -1, len(labels))
    blocks = {"mu": np.zeros(arr.shape[:2]), name: arr}
    return PosteriorDraws(blocks, {name: list(labels)}, "Flat", ChainConfig(1, 2, 1, 1))


def test_summarize_examples():
    s = summarize(_fake_draws([1, 2, 3]), min_draws=3)
    st_ = s.stats["gamma[x1]"]
    assert st_["mean"] == 2.0 and st_["sd"] == 1.0
    u = np.random.default_rng(0).uniform(size=10000)
    st2 = summarize(_fake_draws(u)).stats["gamma[x1]"]
    assert st2["ci_low"] == pytest.approx(0.025, abs=0.01)
    assert st2["ci_high"] == pytest.approx(0.975, abs=0.01)
    with pytest.raises(ValueError):
        summarize(_fake_draws([1, 2, 3]))


def test_summary_ci_coverage_and_json():
    data = simulate_simple()
    dr = run_mcmc(data, ModelSpec(PriorMethod("HS")), ChainConfig(2, 600, 100, 1, seed=2))
    s = summarize(dr, dic=123.0)
    m = dr.n_chains * dr.n_draws
    for name, st_ in s.stats.items():
        x = dr.pooled(name)
        assert st_["ci_low"] <= st_["ci_high"]
        inside = np.mean((x >= st_["ci_low"]) & (x <= st_["ci_high"]))
        assert abs(inside - 0.95) <= 0.95 * 0 + 2.0 / m + 0.001 or st_["sd"] == 0
    assert all(0 <= p <= 1 for p in s.p_gamma.values())
    assert '"dic": 123.0' in s.to_json()


def test_symmetric_draws_mean_small():
    x = np.random.default_rng(1).standard_normal(5000)
    x = np.concatenate([x, -x])
    st_ = summarize(_fake_draws(x)).stats["gamma[x1]"]
    assert abs(st_["mean"]) < 3 * st_["sd"] / math.sqrt(len(x))


def test_scaled_neighborhood_examples():
    assert scaled_neighborhood_prob([-1, 1, -1, 1]) == 1.0
    tight = 10 + 0.1 * np.random.default_rng(0).standard_normal(1000)
    assert scaled_neighborhood_prob(tight) == 0.0
    z = np.random.default_rng(2).standard_normal(10000)
    assert scaled_neighborhood_prob(z) == pytest.approx(
        stats.norm.cdf(1) - stats.norm.cdf(-1), abs=0.02)
    with pytest.raises(DegeneratePosteriorError):
        scaled_neighborhood_prob([2.0, 2.0, 2.0])
    with pytest.raises(DegeneratePosteriorError):
        scaled_neighborhood_prob([1.0])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(2, 200), elements=st.floats(-1e6, 1e6)))
def test_scaled_neighborhood_sign_invariant(x):
    if not np.std(x) > 0:
        return
    assert scaled_neighborhood_prob(x) == scaled_neighborhood_prob(-x)


def test_flag_examples():
    assert flag_moderators([0.68, 0.20, 0.58]).neighborhood == {2}
    assert flag_moderators([0.5, 0.5]).neighborhood == set()
    assert flag_moderators([0.68, 0.20, 0.58], threshold=1.0).neighborhood == {1, 2, 3}
    flags = flag_moderators(dict(zip(MDD, FLAT_P)), 0.5)
    assert flags.neighborhood == {"age", "DM", "anxiety", "antidepressant"}
    with pytest.raises(ValueError):
        flag_moderators([1.2])


def test_flag_ci_set_from_summary():
    s = PosteriorSummary("Flat", {"gamma[a]": {"mean": 1, "sd": .1, "ci_low": .8, "ci_high": 1.2},
                                  "gamma[b]": {"mean": 0, "sd": 1, "ci_low": -2, "ci_high": 2}},
                         {"a": 0.0, "b": 0.7})
    f = flag_moderators(s)
    assert f.neighborhood == {"a"} and f.ci_excludes_zero == {"a"}


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=15), st.floats(0, 1), st.floats(0, 1))
def test_flags_monotone_in_threshold(ps, t1, t2):
    lo, hi = sorted([t1, t2])
    assert flag_moderators(ps, lo).neighborhood <= flag_moderators(ps, hi).neighborhood


def test_kde_standard_normal_at_zero_and_normalised():
    z = np.random.default_rng(3).standard_normal(10000)
    x, d = density_export(z, grid=[0.0])
    assert d[0] == pytest.approx(1 / math.sqrt(2 * math.pi), abs=0.02)
    grid = np.linspace(-6, 6, 2001)
    x, d = density_export(z, grid)
    assert np.trapezoid(d, x) == pytest.approx(1.0, abs=0.01)
    with pytest.raises(ValueError):
        density_export(z[:50])


def test_prior_density_curves():
    s2 = PriorMethod.parse("CMG-S2-pow")
    x, d = prior_density_export(s2, "shrinkage")
    np.testing.assert_allclose(d, 1.0, atol=1e-9)
    s3 = PriorMethod.parse("CMG-S3-n")
    x, d = prior_density_export(s3, "shrinkage", grid=[0.1, 0.4, 0.8], b=1.2)
    np.testing.assert_allclose(d, stats.beta.pdf([0.1, 0.4, 0.8], 1.2, 2.0), rtol=1e-9)
    f = lambda s: prior_density_export(s3, "shrinkage", grid=[s], b=1.2)[1][0]
    assert integrate.quad(f, 0, 1)[0] == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(UnsupportedMethodError):
        prior_density_export(PriorMethod("UIP"))


def test_tuning_curve_ordering():
    tc = tuning_curves([100], 0.5)
    assert tc["log"][0] == pytest.approx(3.912023005428146, abs=1e-12)
    assert tc["log"][0] < tc["pow"][0] == pytest.approx(10) and tc["n"][0] == 50


def test_cmg_s3_shrinks_posterior_sd_vs_flat():
    data = simulate_simple(seed=9, I=4, gamma=[0.3, 0.0, 0.0], tau=0.5)
    cfg = ChainConfig(1, 3000, 1000, 2, seed=3)
    flat = run_mcmc(data, ModelSpec(PriorMethod("Flat")), cfg).blocks["gamma"][0]
    s3 = run_mcmc(data, ModelSpec(PriorMethod.parse("CMG-S3-pow")), cfg).blocks["gamma"][0]
    assert np.all(s3.std(0, ddof=1) <= flat.std(0, ddof=1) * 1.1)
