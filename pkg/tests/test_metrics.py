import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cmgipd.metrics import (UndefinedMetricError, aarbias, arrmse, arsd, mse_decomposition,
                            participant_residual, psrmse, psrmse_from_norm)


def test_hand_values():
    assert arrmse([[0.0]], [2.0]) == pytest.approx(1.0, abs=1e-12)
    assert aarbias([[1.0]], [2.0]) == pytest.approx(0.5, abs=1e-12)
    assert arsd([[0.0], [2.0]], [1.0]) == pytest.approx(math.sqrt(2) / 2, abs=1e-12)
    assert psrmse_from_norm(4.0, 4) == pytest.approx(math.sqrt(0.5), abs=1e-12)
    assert psrmse_from_norm(4.0, 4, "conventional") == pytest.approx(1.0, abs=1e-12)
    r = participant_residual([1, 1, 1, 1], np.zeros((4, 1)), 1.0, [0.0], 0.0, [0.0])
    np.testing.assert_array_equal(r, [1, 1, 1, 1])
    assert psrmse([1, 1, 1, 1], np.zeros((4, 1)), 1.0, [0.0], 0.0, [0.0]) == pytest.approx(
        math.sqrt(0.5), abs=1e-12)


def test_conventional_hand_values():
    assert arrmse([[0.0]], [2.0], "conventional") == pytest.approx(1.0, abs=1e-12)
    assert aarbias([[1.0]], [2.0], "conventional") == pytest.approx(0.5, abs=1e-12)
    est = [[1.0, 0.0], [3.0, 0.0]]
    assert arsd(est, [2.0, 0.0], "conventional") == pytest.approx(math.sqrt(0.5) / 1.0)


def test_zero_and_trivial_cases():
    g = np.array([1.5, 1.5, 0, 0])
    assert arrmse(np.tile(g, (3, 1)), g) == 0.0
    assert aarbias(np.tile(g, (3, 1)), g) == 0.0
    assert arsd(np.tile(g + 0.3, (3, 1)), g) == 0.0
    assert psrmse([1, 0], [[1.0], [2.0]], 3.0, [1.0], 3.0, [1.0]) == 0.0
    assert psrmse([0, 0], [[0.0], [0.0]], 3.0, [1.0], 1.0, [5.0], em_only=True) == 0.0
    with pytest.raises(UndefinedMetricError):
        arrmse([[1.0]], [0.0])
    with pytest.raises(ValueError):
        arrmse([[1.0]], [1.0], variant="weird")


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (5, 3), elements=st.floats(-10, 10)),
       arrays(np.float64, 3, elements=st.floats(-5, 5)), st.floats(0.01, 100))
def test_scale_invariance(est, gam, c):
    if np.sum(np.abs(gam)) < 1e-3:
        return
    for f in (arrmse, arsd):
        assert f(c * est, c * gam) == pytest.approx(f(est, gam), rel=1e-9, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (6, 2), elements=st.floats(-10, 10)), st.floats(-50, 50))
def test_arsd_translation_invariant(est, shift):
    assert arsd(est + shift, [1.0, 0.5]) == pytest.approx(arsd(est, [1.0, 0.5]), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (7, 3), elements=st.floats(-10, 10)), st.randoms(use_true_random=False))
def test_permutation_invariance(est, rnd):
    gam = [1.0, 0.0, -2.0]
    perm = list(range(7))
    rnd.shuffle(perm)
    for f in (arrmse, aarbias, arsd):
        assert f(est[perm], gam) == pytest.approx(f(est, gam), rel=1e-12, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (8, 4), elements=st.floats(-10, 10)))
def test_mse_decomposition(est):
    gam = np.array([1.5, 0.0, 0.75, 0.0])
    d = mse_decomposition(est, gam)
    np.testing.assert_allclose(d["mse"], d["variance"] + d["bias2"], atol=1e-12 * (1 + d["mse"].max()))


def test_literal_and_conventional_orderings_agree_fuzz():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        R, d = rng.integers(1, 20), rng.integers(1, 9)
        gam = rng.normal(size=d)
        gam[rng.random(d) < 0.3] = 0.0
        if not np.any(gam):
            gam[0] = 1.0
        ests = [gam + rng.normal(scale=rng.uniform(0.01, 3), size=(R, d)) for _ in range(4)]
        for f in (arrmse, aarbias, arsd):
            lit = [f(e, gam) for e in ests]
            con = [f(e, gam, "conventional") for e in ests]
            assert np.array_equal(np.argsort(lit, kind="stable"), np.argsort(con, kind="stable"))
