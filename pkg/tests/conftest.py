import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hwas.synth import SynthScenario, simulate

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_synth():
    """Three warm seasons, 30 codes, two with a lag-0 heat effect."""
    sc = SynthScenario(n_codes=30, years=(2011, 2013), n_tracts=6,
                       baseline_rates=[0.6 if i in (3, 7) else 0.08 for i in range(30)],
                       effects={3: {0: 0.12}, 7: {0: 0.12}}, seed=11)
    return simulate(sc)


@pytest.fixture(scope="session")
def synth_bundle(tmp_path_factory, small_synth):
    out = tmp_path_factory.mktemp("bundle")
    paths = small_synth.write(out)
    return out, paths
