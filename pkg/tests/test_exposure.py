import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

from hwas.errors import EmptyTract, NoData
from hwas.exposure import (
    ExposureSeries, PercentileAnchors, citywide_series, citywide_value, is_extreme, link_grid_to_tracts,
    load_grid, load_temperature, percentile_anchors,
)


def _series(values):
    idx = pd.date_range("2012-07-01", periods=len(values), freq="D")
    return pd.Series(values, index=idx, dtype=float)


def test_single_cell_and_mean():
    s = link_grid_to_tracts([("c1", "2012-07-01", 30.0)], {"c1": "A"})
    assert s.value("A", "2012-07-01") == 30.0
    s = link_grid_to_tracts([("c1", "2012-07-01", 30.0), ("c2", "2012-07-01", 32.0)], {"c1": "A", "c2": "A"})
    assert s.value("A", "2012-07-01") == 31.0
    with pytest.raises(EmptyTract):
        s.value("B", "2012-07-01")


def test_citywide_mean_and_missing_date():
    s = link_grid_to_tracts([("c1", "2012-07-01", 30.0), ("c2", "2012-07-01", 32.0)], {"c1": "A", "c2": "B"})
    city = citywide_series(s)
    assert citywide_value(city, "2012-07-01") == 31.0
    with pytest.raises(NoData):
        citywide_value(city, "2012-07-02")
    single = link_grid_to_tracts([("c1", "2012-07-01", 28.5)], {"c1": "A"})
    assert citywide_value(single.citywide, "2012-07-01") == 28.5


def test_percentile_examples():
    a = percentile_anchors(_series([1, 2, 3, 4, 5]), years=(2012, 2012), qs=(0.5, 0.5, 0.5))
    assert a.p50 == 3
    b = percentile_anchors(_series([1, 2, 3, 4]), years=(2012, 2012), qs=(0.5, 0.5, 0.5))
    assert b.p50 == 2.5


def test_percentile_only_in_season():
    idx = pd.date_range("2012-01-01", "2012-12-31", freq="D")
    s = pd.Series(np.where(idx.month.isin([5, 6, 7, 8, 9]), 25.0, -100.0), index=idx)
    a = percentile_anchors(s, years=(2012, 2012))
    assert (a.p50, a.p95, a.n_days) == (25.0, 25.0, 153)
    with pytest.raises(NoData):
        percentile_anchors(s, years=(2020, 2020))


@given(st.lists(st.floats(-10, 45), min_size=3, max_size=100))
def test_percentiles_monotone_and_permutation_invariant(vals):
    s = _series(vals)
    a = percentile_anchors(s, years=(2012, 2013))
    assert a.p50 <= a.p70 <= a.p95
    shuffled = pd.Series(s.to_numpy()[::-1], index=s.index[::-1])
    assert percentile_anchors(shuffled, years=(2012, 2013)) == a


@given(st.lists(st.floats(-10, 45), min_size=2, max_size=10), st.floats(0.5, 3.0))
def test_mean_linearity(vals, c):
    cells = [(f"c{i}", "2012-07-01", v) for i, v in enumerate(vals)]
    members = {f"c{i}": "AB"[i % 2] for i in range(len(vals))}
    base = link_grid_to_tracts(cells, members)
    scaled = link_grid_to_tracts([(a, d, c * v) for a, d, v in cells], members)
    np.testing.assert_allclose(scaled.tract.to_numpy(), c * base.tract.to_numpy(), rtol=1e-12)
    np.testing.assert_allclose(scaled.citywide.to_numpy(), c * base.citywide.to_numpy(), rtol=1e-12)


def test_extreme_day_rule():
    city = _series([33.67, 33.66, 38.67])
    a = PercentileAnchors(27.59, 29.74, 33.67, (5, 6, 7, 8, 9), (2011, 2023))
    assert is_extreme("2012-07-01", city, a)
    assert not is_extreme("2012-07-02", city, a)
    assert is_extreme("2012-07-03", city, a)
    assert not is_extreme("2012-07-01", city, a, strict=True)


def test_anchor_order_enforced():
    with pytest.raises(ValueError):
        PercentileAnchors(30.0, 29.0, 33.0, (5,), (2011, 2011))


def test_loaders_round_trip(tmp_path):
    pd.DataFrame({"cell_id": ["c1", "c2", "c3"], "date": ["2012-07-01"] * 3, "tmax_c": [30.0, 32.0, 26.0]}) \
        .to_csv(tmp_path / "grid.csv", index=False)
    pd.DataFrame({"cell_id": ["c1", "c2", "c3"], "tract_id": ["A", "A", "B"]}).to_csv(tmp_path / "m.csv", index=False)
    s = load_grid(tmp_path / "grid.csv", tmp_path / "m.csv")
    s.to_long().assign(date="2012-07-01").to_csv(tmp_path / "t.csv", index=False)
    t = load_temperature(tmp_path / "t.csv")
    assert t.value("A", "2012-07-01") == 31.0 and t.value("B", "2012-07-01") == 26.0
    assert citywide_value(t.citywide, "2012-07-01") == 28.5
