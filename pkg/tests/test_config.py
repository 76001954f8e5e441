import pytest

from hwas.config import Inputs, RunConfig
from hwas.errors import InputValidationError


def test_defaults():
    c = RunConfig()
    assert c.season_months == [5, 6, 7, 8, 9] and c.years == [2011, 2023]
    assert (c.target_percentile, c.ref_percentile, c.screen_percentile) == (0.95, 0.50, 0.70)
    assert (c.alpha, c.min_count, c.min_rel_freq, c.max_lag) == (0.05, 100, 0.30, 3)


@pytest.mark.parametrize("bad", [dict(ref_percentile=0.95), dict(alpha=0), dict(min_rel_freq=1.5),
                                 dict(season_months=[13]), dict(years=[2023, 2011]), dict(referent="weekly"),
                                 dict(workers=0), dict(criteria={"slope": True, "size": False}),
                                 dict(screen_percentile=0.8)])
def test_invalid_values_rejected(bad):
    with pytest.raises(InputValidationError):
        RunConfig(**bad)


def test_unknown_keys_rejected():
    with pytest.raises(InputValidationError):
        RunConfig.from_dict({"alpah": 0.1})


def test_hash_ignores_workers_and_paths():
    a = RunConfig()
    assert a.config_hash() == RunConfig(workers=4, inputs=Inputs(visits="x.csv")).config_hash()
    assert a.config_hash() != RunConfig(ref_percentile=0.70).config_hash()


def test_load_yaml(tmp_path):
    (tmp_path / "c.yaml").write_text("alpha: 0.01\ninputs:\n  visits: v.csv\n")
    c = RunConfig.load(tmp_path / "c.yaml")
    assert c.alpha == 0.01 and c.inputs.visits == "v.csv"
    (tmp_path / "bad.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(InputValidationError):
        RunConfig.load(tmp_path / "bad.yaml")
