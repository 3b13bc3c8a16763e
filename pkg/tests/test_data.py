import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cmgipd.data import (IngestionError, SchemaError, TrialBlock, ValidationError,
                         center_covariates, from_arrays, ingest_csv, moderator_column)


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_ingest_five_trials_eight_covariates(tmp_path):
    rng = np.random.default_rng(0)
    lines = ["trial_id,y,t," + ",".join(f"x{j}" for j in range(1, 9))]
    for i in range(5):
        for j in range(6):
            xs = ",".join(f"{v:.3f}" for v in rng.standard_normal(8))
            lines.append(f"T{i},{rng.standard_normal():.3f},{j % 2},{xs}")
    d = ingest_csv(_write(tmp_path, "\n".join(lines) + "\n"))
    assert (d.I, d.p, d.d, d.N) == (5, 8, 8, 30)
    assert d.offsets is None
    assert d.covariates == tuple(f"x{j}" for j in range(1, 9))


def test_covariate_columns_sorted_numerically(tmp_path):
    p = _write(tmp_path, "trial_id,y,t,x10,x2\nA,1,0,1,2\nA,2,1,3,4\n")
    d = ingest_csv(p)
    assert d.covariates == ("x2", "x10")
    np.testing.assert_array_equal(d.X, [[2, 1], [4, 3]])


def test_single_arm_trial_rejected(tmp_path):
    p = _write(tmp_path, "trial_id,y,t,x1\nA,1,1,0.1\nA,2,1,0.2\nB,1,0,1\nB,2,1,2\n")
    with pytest.raises(ValidationError, match="both treatment arms"):
        ingest_csv(p)


def test_empty_cell_names_row(tmp_path):
    p = _write(tmp_path, "trial_id,y,t,x1,x2,x3\nA,1,0,1,2,3\nA,1,1,1,2,\n")
    with pytest.raises(IngestionError, match="row 3") as ei:
        ingest_csv(p)
    assert ei.value.row == 3
    assert "x3" in str(ei.value)


def test_non_numeric_cell(tmp_path):
    p = _write(tmp_path, "trial_id,y,t,x1\nA,1,0,abc\nA,1,1,2\n")
    with pytest.raises(IngestionError, match="row 2"):
        ingest_csv(p)


def test_missing_column_schema_error(tmp_path):
    p = _write(tmp_path, "trial_id,y,x1\nA,1,0\n")
    with pytest.raises(SchemaError, match="t"):
        ingest_csv(p)


def test_column_map_and_drop_incomplete(tmp_path):
    p = _write(tmp_path, "study,out,arm,age,sex\nA,1,0,30,1\nA,2,1,,0\nA,3,1,40,0\nA,4,0,50,1\n")
    d = ingest_csv(p, {"trial_id": "study", "y": "out", "t": "arm", "covariates": ["age", "sex"]},
                   moderators=["sex"], drop_incomplete=True)
    assert d.rejected_rows == (3,)
    assert d.N == 3  # source rows minus rejected rows
    assert d.moderator_names == ("sex",)


def test_row_order_preserved_within_trial(tmp_path):
    p = _write(tmp_path, "trial_id,y,t,x1\nB,1,0,1\nA,5,0,1\nB,2,1,1\nA,6,1,1\n")
    d = ingest_csv(p)
    assert d.trial_ids == ("B", "A")
    np.testing.assert_array_equal(d.trials[0].y, [1, 2])


def test_center_examples():
    d = from_arrays([1, 2, 3], [0, 1, 0], [[1], [2], [3]], ["a"] * 3)
    np.testing.assert_allclose(center_covariates(d).X[:, 0], [-1, 0, 1])
    d2 = from_arrays([1, 2, 3, 4], [0, 1, 0, 1], [[0], [0], [2], [2]], ["a", "a", "b", "b"])
    c = center_covariates(d2)
    np.testing.assert_allclose(c.X[:, 0], [-1, -1, 1, 1])
    cc = center_covariates(c)
    np.testing.assert_allclose(cc.X, c.X, atol=1e-12)
    np.testing.assert_allclose(cc.uncentered_X(), d2.X, atol=1e-12)


def test_within_trial_centering():
    d = from_arrays([1, 2, 3, 4], [0, 1, 0, 1], [[0], [2], [10], [20]], ["a", "a", "b", "b"])
    c = center_covariates(d, "within")
    np.testing.assert_allclose(c.X[:, 0], [-1, 1, -5, 5])
    with pytest.raises(ValueError):
        center_covariates(d, "median")


def test_moderator_column_examples():
    d = from_arrays([0, 0, 0], [1, 0, 1], [[2], [5], [-3]], ["a"] * 3)
    np.testing.assert_array_equal(moderator_column(d, 0), [2, 0, -3])
    # t all 1 within the product leaves x_k unchanged; control rows give zeros
    d2 = from_arrays([0] * 6, [1, 1, 0, 1, 1, 0], [[2], [3], [4], [5], [6], [7]],
                     ["a", "a", "a", "b", "b", "b"])
    np.testing.assert_array_equal(d2.moderator_column(0), [2, 3, 0, 5, 6, 0])
    with pytest.raises(IndexError):
        moderator_column(d, 1)


def test_trial_block_invariants():
    with pytest.raises(ValidationError):
        TrialBlock("a", [1, 2], [0, 2], [[1], [2]])
    with pytest.raises(ValidationError):
        TrialBlock("a", [1, 2, 3], [0, 1], [[1], [2]])
    with pytest.raises(ValidationError):
        TrialBlock("a", [1.0, np.nan], [0, 1], [[1], [2]])
    tb = TrialBlock("a", [1, 2], [0, 1], [[1], [2]])
    with pytest.raises(ValueError):
        tb.y[0] = 5.0


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(4, 20), st.integers(1, 4)),
              elements=st.floats(-1e3, 1e3)),
       st.integers(0, 2**32 - 1))
def test_centering_roundtrip_and_zero_mean(X, seed):
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    trial = np.where(np.arange(n) < n // 2, "a", "b")
    t = (np.arange(n) % 2).astype(float)
    t[n // 2] = 1 - t[n // 2 + 1]  # both arms in the second trial as well
    y = rng.standard_normal(n)
    d = from_arrays(y, t, X, trial)
    c = center_covariates(d)
    assert np.all(np.abs(c.X.mean(axis=0)) <= 1e-10 * max(1.0, np.abs(X).max()))
    np.testing.assert_allclose(c.uncentered_X(), X, atol=1e-10 * max(1.0, np.abs(X).max()))
    for k in range(c.d):
        col = c.moderator_column(k)
        assert np.all(col[c.t == 0] == 0)
