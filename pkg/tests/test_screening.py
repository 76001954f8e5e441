import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

from hwas.config import RunConfig
from hwas.exposure import percentile_anchors
from hwas.screening import bh_adjust, build_design, count_matrix, daily_counts, screen, season_calendar


def bh_enumeration(p):
    """Adjusted p_i = min over ranks k >= rank(i) of min(1, m p_(k) / k), by brute force."""
    m = len(p)
    ordered = sorted(p)
    out = []
    for v in p:
        r = ordered.index(v) + 1
        out.append(min(min(1.0, m * ordered[k - 1] / k) for k in range(r, m + 1)))
    return np.array(out)


def test_bh_hand_examples():
    np.testing.assert_array_equal(bh_adjust([0.04]), [0.04])
    np.testing.assert_allclose(bh_adjust([0.01, 0.02, 0.03, 0.04]), [0.04] * 4, atol=1e-15)
    np.testing.assert_allclose(bh_adjust([0.005, 0.1]), [0.01, 0.1], atol=1e-15)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=60))
def test_bh_matches_enumeration(p):
    np.testing.assert_allclose(bh_adjust(p), bh_enumeration(p), atol=1e-15, rtol=0)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=200))
def test_bh_monotone_and_bounded(p):
    adj = bh_adjust(p)
    order = np.argsort(p, kind="stable")
    assert np.all(np.diff(adj[order]) >= 0)
    # m * p / m may round one ulp below p
    assert np.all((adj >= np.asarray(p) - 1e-15) & (adj <= 1))


def test_season_calendar_length():
    cal = season_calendar((2012, 2012), [5, 6, 7, 8, 9])
    assert len(cal) == 153


def _frame(dates, code="E86"):
    return pd.DataFrame({
        "visit_id": [f"v{i}" for i in range(len(dates))], "patient_id": "p", "date": pd.to_datetime(dates),
        "tract_id": "T1", "age_years": 40.0, "sex": "Female", "race_ethnicity": "White", "region": "North",
        "code": code,
    })


def test_daily_counts_examples():
    cal = season_calendar((2012, 2013), [5, 6, 7, 8, 9])
    y = daily_counts(_frame(["2012-07-04"] * 3 + ["2012-08-01"]), "E86", cal)
    assert len(y) == 306
    assert y[cal.get_loc(pd.Timestamp("2012-07-04"))] == 3
    assert np.count_nonzero(y) == 2
    assert y[153:].sum() == 0


def test_count_matrix_sorted_codes():
    cal = season_calendar((2012, 2012), [5, 6, 7, 8, 9])
    frame = pd.concat([_frame(["2012-06-01"], "R55"), _frame(["2012-06-01", "2012-06-02"], "E86")])
    codes, mat = count_matrix(frame, cal)
    assert codes == ["E86", "R55"]
    assert mat.sum(axis=1).tolist() == [2, 1]


def test_design_reference_levels():
    cal = season_calendar((2011, 2013), [5, 6, 7, 8, 9])
    d = build_design(cal, np.linspace(20, 35, len(cal)), {pd.Timestamp("2012-07-04").date()})
    assert "year_2011" not in d.names and "year_2012" in d.names
    assert "month_5" not in d.names and "dow_Mon" not in d.names
    assert d.values[:, d.names.index("holiday")].sum() == 1
    lin = build_design(cal, np.linspace(20, 35, len(cal)), year_coding="linear")
    assert "year" in lin.names


@pytest.fixture(scope="module")
def screened(small_synth):
    return screen(small_synth.visits, small_synth.exposure.citywide, small_synth.anchors,
                  RunConfig(years=[2011, 2013], min_count=100))


def test_injected_codes_retained(screened, small_synth):
    assert set(small_synth.injected_codes) <= set(screened.retained_codes)


def test_retention_consistent_with_criteria(screened):
    for r in screened.rows:
        assert r.retained == (r.crit_slope and r.crit_freq and r.crit_count)
        assert 0 <= r.rel_freq_above_p70 <= 1
        assert r.crit_count == (r.total_count >= 100)


def test_sorted_by_adjusted_p(screened):
    keys = [(r.adj_p, r.code) for r in screened.rows]
    assert keys == sorted(keys)


def test_toggling_a_criterion_only_moves_that_criterion(small_synth, screened):
    cfg = RunConfig(years=[2011, 2013], min_count=100, criteria={"slope": True, "freq": True, "count": False})
    loose = screen(small_synth.visits, small_synth.exposure.citywide, small_synth.anchors, cfg)
    by_code = {r.code: r for r in screened.rows}
    for r in loose.rows:
        base = by_code[r.code]
        assert (r.crit_slope, r.crit_freq, r.crit_count) == (base.crit_slope, base.crit_freq, base.crit_count)
        assert r.retained == (r.crit_slope and r.crit_freq)


def test_count_floor(small_synth):
    codes = small_synth.visits.groupby("code").size()
    code = codes.index[0]
    n = int(codes.iloc[0])
    cfg = RunConfig(years=[2011, 2013], min_count=n + 1)
    res = screen(small_synth.visits[small_synth.visits["code"] == code], small_synth.exposure.citywide,
                 small_synth.anchors, cfg)
    assert not res.rows[0].crit_count and not res.rows[0].retained


def test_hot_concentrated_code_retained(small_synth):
    # 500 visits on hot days with a log-linear IRR of 1.05 per degree
    rng = np.random.default_rng(5)
    city = small_synth.exposure.citywide
    cal = season_calendar((2011, 2013), [5, 6, 7, 8, 9])
    t = city.reindex(cal).to_numpy()
    lam = np.exp(np.log(1.05) * (t - t.mean()))
    y = rng.multinomial(500, lam / lam.sum())
    dates = np.repeat(cal, y)
    res = screen(_frame(dates), city, small_synth.anchors, RunConfig(years=[2011, 2013]))
    assert res.rows[0].retained and res.rows[0].irr > 1


def test_workers_do_not_change_results(small_synth, screened):
    par = screen(small_synth.visits, small_synth.exposure.citywide, small_synth.anchors,
                 RunConfig(years=[2011, 2013], min_count=100), workers=2)
    assert par.to_frame().equals(screened.to_frame())


def test_manhattan_frame(screened):
    m = screened.manhattan_frame()
    assert list(m.columns) == ["code", "chapter", "neg_log10_adj_p", "retained"]
    assert (m["chapter"] == m["code"].str[0]).all()
