import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mstatic.results import (ResultRow, cdf_at, cdf_to_csv, compute_cdf, ks_statistic, percentile, rmse,
                             rows_from_csv, rows_to_csv, summarize)


def _rows():
    return [
        ResultRow.make(0, 0, "cauchy", (1, 2, 1), (1.1, 2.0, 1.0), 12, True),
        ResultRow.make(0, 1, "cauchy", (1.5, 2, 1), (1.5, 2.3, 1.0), 40, True),
        ResultRow.make(0, 0, "l2", (1, 2, 1), (2.0, 2.0, 1.0), 9999, False, failed=True),
        ResultRow.make(0, 0, "cauchy", (1, 2, 1), (4.0, 6.0, 1.0), 80, True, init_kind="random"),
    ]


def test_cdf_examples():
    assert cdf_at([1, 2, 3, 4], 2) == 0.5
    assert compute_cdf([1, 2, 3, 4]) == [(1.0, 0.25), (2.0, 0.5), (3.0, 0.75), (4.0, 1.0)]
    assert cdf_at([2, 2, 2], 2) == 1.0
    assert cdf_at([2, 2, 2], 1.999) == 0.0
    with pytest.raises(ValueError):
        compute_cdf([])


def test_uniform_sample_cdf_close_to_identity():
    rng = np.random.default_rng(0)
    cdf = compute_cdf(rng.random(1000))
    x = np.array([v for v, _ in cdf])
    f = np.array([q for _, q in cdf])
    # one-sample KS: check both sides of every step
    assert max(np.max(np.abs(f - x)), np.max(np.abs(f - 1 / len(x) - x))) < 0.06


def test_percentile_lower_and_rmse():
    e = np.arange(1, 11, dtype=float)
    assert percentile(e, 90) == 9.0
    assert percentile(e, 50) == 5.0
    assert rmse([3, 4]) == pytest.approx(np.sqrt(12.5))


def test_ks_statistic():
    assert ks_statistic([1, 2, 3], [1, 2, 3]) == 0.0
    assert ks_statistic([1, 2], [3, 4]) == 1.0
    rng = np.random.default_rng(0)
    assert ks_statistic(rng.random(5000), rng.random(5000)) < 0.06


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=50), st.lists(st.floats(0, 100), min_size=1, max_size=50))
def test_ks_symmetric_and_bounded(a, b):
    d = ks_statistic(a, b)
    assert d == ks_statistic(b, a)
    assert 0.0 <= d <= 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=50))
def test_cdf_monotone(e):
    c = compute_cdf(e)
    assert all(v0 <= v1 and f0 < f1 for (v0, f0), (v1, f1) in zip(c[:-1], c[1:]))
    assert c[-1][1] == 1.0


def test_row_tag_and_error():
    rows = _rows()
    assert rows[0].error_m == pytest.approx(0.1)
    assert [r.tag for r in rows] == ["cauchy", "cauchy", "l2", "cauchy-random"]


def test_csv_round_trip():
    rows = _rows()
    text = rows_to_csv(rows)
    assert text.splitlines()[0] == ("trial,step,estimator,init_kind,true_x,true_y,true_z,est_x,est_y,est_z,"
                                    "error_m,iterations,converged,failed")
    assert rows_from_csv(text) == rows


def test_csv_load_rejects_inconsistent_error():
    text = rows_to_csv(_rows()[:1]).replace(repr(_rows()[0].error_m), "0.5")
    with pytest.raises(ValueError):
        rows_from_csv(text)
    assert rows_from_csv(text, check=False)[0].error_m == 0.5


def test_summarize():
    s = summarize(_rows())
    assert list(s) == ["cauchy", "l2", "cauchy-random"]
    c = s["cauchy"]
    assert c.count == 2
    assert c.p50_m == pytest.approx(0.1)
    assert c.p90_m == pytest.approx(0.1)
    assert c.mean_iterations == 26
    assert c.rmse_m == pytest.approx(np.sqrt((0.01 + 0.09) / 2))
    assert s["l2"].failure_rate == 1.0
    assert s["cauchy-random"].p50_m == pytest.approx(5.0)
    assert set(c.as_dict()) == {"estimator", "rmse_m", "p50_m", "p90_m", "mean_iterations", "failure_rate",
                                "count"}


def test_cdf_csv():
    assert cdf_to_csv([0.5, 0.25]) == "error_m,fraction\n0.25,0.5\n0.5,1.0\n"
