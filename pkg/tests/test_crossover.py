import datetime as dt

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

from hwas.config import RunConfig
from hwas.crossover import (
    VARIANTS, ReferentScheme, assemble_lagged, build_strata, compare_variants, fit_code, run_sensitivity,
    run_stage2, run_stratified, select_referents, variant_from_config,
)
from hwas.dlnm import make_crossbasis_spec
from hwas.errors import InputValidationError
from hwas.exposure import ExposureSeries

MONTH = ReferentScheme("month")
FIXED = ReferentScheme("fixed28")
season_dates = st.dates(dt.date(2011, 5, 1), dt.date(2023, 9, 30)).filter(lambda d: 5 <= d.month <= 9)


def test_month_examples():
    assert select_referents(dt.date(2012, 7, 4), MONTH) == (dt.date(2012, 7, 11), dt.date(2012, 7, 18),
                                                           dt.date(2012, 7, 25))
    ctl = select_referents(dt.date(2013, 5, 1), MONTH)
    assert [d.day for d in ctl] == [8, 15, 22, 29]


@given(season_dates)
def test_month_scheme_matches_enumeration(d):
    expected = tuple(x for x in (dt.date(d.year, d.month, day) for day in range(1, 32)
                                 if _valid(d.year, d.month, day))
                     if x.weekday() == d.weekday() and x != d)
    assert select_referents(d, MONTH) == expected


def _valid(y, m, day):
    try:
        dt.date(y, m, day)
        return True
    except ValueError:
        return False


@given(season_dates)
def test_fixed_scheme_tile(d):
    ctl = select_referents(d, FIXED)
    assert len(ctl) == 3 and d not in ctl
    members = sorted(ctl + (d,))
    assert all(x.weekday() == d.weekday() for x in members)
    assert (members[-1] - members[0]).days == 21
    # every member maps back to the same tile
    for x in ctl:
        assert set(select_referents(x, FIXED)) | {x} == set(members)


def _synthetic_exposure():
    dates = pd.date_range("2012-06-20", "2012-08-10", freq="D")
    tract = pd.DataFrame({"A": np.arange(len(dates), dtype=float) + 20.0,
                          "B": np.arange(len(dates), dtype=float) + 40.0}, index=dates)
    return ExposureSeries(tract)


def _visits(rows):
    return pd.DataFrame([dict(visit_id=f"v{i}", patient_id="p", date=pd.Timestamp(d), tract_id=t, age_years=40.0,
                              sex="Female", race_ethnicity="White", region="North", code="E86")
                         for i, (d, t) in enumerate(rows)])


def test_lag_window_and_holiday():
    exp = _synthetic_exposure()
    lagged = assemble_lagged(_visits([("2012-07-04", "A")]), exp, MONTH, 3, {dt.date(2012, 7, 4)})
    case = lagged.is_case
    jul4 = exp.tract.index.get_loc(pd.Timestamp("2012-07-04")) + 20.0
    np.testing.assert_array_equal(lagged.lagged[case][0], [jul4, jul4 - 1, jul4 - 2, jul4 - 3])
    assert lagged.holiday[case].tolist() == [1.0]
    assert lagged.holiday[~case].tolist() == [0.0, 0.0, 0.0]


def test_identical_visits_become_weighted_stratum():
    exp = _synthetic_exposure()
    spec = make_crossbasis_spec([40.0], (10.0, 100.0))
    arr = build_strata(_visits([("2012-07-04", "A"), ("2012-07-04", "A")]), exp, MONTH, spec)
    assert arr.weight.tolist() == [2.0] * 4
    strata = arr.to_strata(expand=True)
    assert len(strata) == 2
    np.testing.assert_array_equal(strata[0].rows, strata[1].rows)


def test_missing_tract_policy():
    exp = _synthetic_exposure()
    v = _visits([("2012-07-04", None), ("2012-07-05", "A")])
    default = assemble_lagged(v, exp, MONTH, 3)
    assert default.dropped["missing_tract"] == 1 and default.n_visits == 1
    cw = assemble_lagged(v, exp, MONTH, 3, config=RunConfig(stage2_missing_tract="citywide"))
    assert cw.n_visits == 2


def test_unknown_tract_falls_back_to_citywide():
    exp = _synthetic_exposure()
    lagged = assemble_lagged(_visits([("2012-07-04", "ZZ")]), exp, MONTH, 0)
    jul4 = exp.tract.index.get_loc(pd.Timestamp("2012-07-04")) + 30.0
    assert lagged.lagged[lagged.is_case][0, 0] == jul4
    strict = assemble_lagged(_visits([("2012-07-04", "ZZ")]), exp, MONTH, 0,
                             config=RunConfig(tract_fallback_citywide=False))
    assert strict.n_visits == 0 and strict.dropped["missing_exposure"] == 1


def test_variants_and_config_labels():
    assert variant_from_config(RunConfig()).name == "primary"
    assert variant_from_config(RunConfig(ref_percentile=0.70)).name == "sens_i"
    assert variant_from_config(RunConfig(max_lag=5, lag_knots=2)).name == "sens_iv"
    with pytest.raises(InputValidationError):
        variant_from_config(RunConfig(max_lag=4))


@pytest.fixture(scope="module")
def stage2(small_synth):
    cfg = RunConfig(years=[2011, 2013])
    return run_stage2(small_synth.codes[:10], small_synth.visits, small_synth.exposure, small_synth.anchors,
                      "primary", small_synth.holidays, cfg)


def test_stage2_recovers_injected_effect(stage2, small_synth):
    code = small_synth.codes[3]
    r = stage2[code]
    assert r.stable and not r.error
    truth = small_synth.truth.set_index(["code", "contrast"]).loc[(code, "lag0"), "odds_ratio"]
    lag0 = r.estimate("lag0")
    assert lag0.ci_low < truth < lag0.ci_high
    assert [e.contrast_name for e in r.estimates] == ["lag0", "lag1", "lag2", "lag3", "cum0-1", "cum0-2", "cum0-3"]


def test_stage2_workers_identical(stage2, small_synth):
    par = run_stage2(small_synth.codes[:10], small_synth.visits, small_synth.exposure, small_synth.anchors,
                     "primary", small_synth.holidays, RunConfig(years=[2011, 2013]), workers=2)
    for code in stage2:
        assert par[code].estimates == stage2[code].estimates


def test_empty_code_reports_error(small_synth):
    r = fit_code("Z99", small_synth.visits.iloc[0:0], small_synth.exposure, small_synth.anchors,
                 VARIANTS["primary"])
    assert r.error.startswith("NoInformativeStrata")


def test_stratified_excludes_missing_and_marks_unstable(small_synth):
    out = run_stratified([small_synth.codes[3]], small_synth.visits, small_synth.exposure, small_synth.anchors,
                         "sex", "primary", small_synth.holidays, RunConfig(years=[2011, 2013]))
    assert {s.stratum for s in out} <= {"Female", "Male", "Other"}
    for s in out:
        if not s.reportable:
            assert not s.result.significant
            assert s.stability_reason


def test_identical_variants_have_empty_diff(stage2):
    rows = compare_variants({"primary": stage2, "copy": stage2})
    assert rows[0].dropped_codes == [] and rows[0].new_codes == []


def test_sensitivity_runs_every_variant(small_synth):
    results, rows = run_sensitivity([small_synth.codes[3]], small_synth.visits, small_synth.exposure,
                                    small_synth.anchors, holidays=small_synth.holidays,
                                    config=RunConfig(years=[2011, 2013]))
    assert list(results) == list(VARIANTS)
    assert [r.variant for r in rows] == ["sens_i", "sens_ii", "sens_iii", "sens_iv"]
    assert results["sens_iv"][small_synth.codes[3]].estimates[-1].contrast_name == "cum0-5"
