import pytest

from nmsmc.scenarios import BUILTIN_SCENARIOS, run_scenario


@pytest.fixture(scope="session")
def base_run(tmp_path_factory):
    """The builtin base scenario at desk scale (3 chains of 2000 iterations)."""
    return run_scenario(BUILTIN_SCENARIOS["base"], tmp_path_factory.mktemp("base"), seed=1)
