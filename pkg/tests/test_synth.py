import numpy as np
import pandas as pd
import pytest

from hwas.config import RunConfig
from hwas.screening import screen
from hwas.synth import SynthScenario, generate_synthetic, simulate, true_log_or


def test_null_truth_is_unity():
    data = simulate(SynthScenario(n_codes=5, years=(2011, 2011), seed=1))
    assert (data.truth["odds_ratio"] == 1.0).all()
    assert data.injected_codes == []


def test_truth_matches_analytic_contrast():
    data = simulate(SynthScenario(n_codes=5, years=(2011, 2012), effects={2: {0: 0.1, 2: 0.05}}, seed=2))
    a = data.anchors
    t = data.truth.set_index(["code", "contrast"])["log_or"]
    code = data.codes[2]
    assert t[(code, "lag0")] == pytest.approx(0.1 * (a.p95 - a.p50), abs=1e-12)
    assert t[(code, "lag1")] == 0.0
    assert t[(code, "cum0-2")] == pytest.approx(0.15 * (a.p95 - a.p50), abs=1e-12)
    assert true_log_or({0: 0.1}, a.p50, a.p95, [0]) == t[(code, "lag0")]


def test_seed_determinism(tmp_path):
    sc = SynthScenario(n_codes=8, years=(2011, 2011), effects={1: {0: 0.1}}, seed=7)
    a = generate_synthetic(sc, tmp_path / "a")
    b = generate_synthetic(sc, tmp_path / "b")
    for name in a:
        assert a[name].read_bytes() == b[name].read_bytes()
    c = generate_synthetic(SynthScenario(n_codes=8, years=(2011, 2011), effects={1: {0: 0.1}}, seed=8),
                           tmp_path / "c")
    assert a["visits"].read_bytes() != c["visits"].read_bytes()


def test_scenario_validation():
    with pytest.raises(ValueError):
        SynthScenario(n_codes=3, baseline_rates=[0.1, -1.0, 0.1])
    with pytest.raises(ValueError):
        SynthScenario(n_codes=3, effects={5: {0: 0.1}})
    with pytest.raises(ValueError):
        SynthScenario(n_codes=3, effects={0: {0: float("inf")}})


def test_overdispersion_inflates_phi():
    phis = {}
    for od in (0.0, 0.5):
        vals = []
        for seed in range(3):
            data = simulate(SynthScenario(n_codes=20, years=(2011, 2013), rate_median=1.0, rate_sigma=0.2,
                                          overdispersion=od, seed=seed))
            res = screen(data.visits, data.exposure.citywide, data.anchors, RunConfig(years=[2011, 2013]))
            vals += [r.dispersion for r in res.rows]
        phis[od] = np.nanmean(vals)
    assert phis[0.5] > 1.1 > phis[0.0] > 0.9
