import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from trihybrid.channel import ScenarioConfig, generate_scenario
from trihybrid.sphharm import default_grid
from trihybrid.units import dbm_to_milliwatts
from trihybrid.wmmse import SolverConfig


@pytest.fixture(scope="session")
def grid():
    return default_grid()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def desk_scenario(seed: int, **overrides) -> tuple:
    """Default desk-scale scenario: 4x4 base station, two 2-antenna users,
    four paths each."""
    config = ScenarioConfig(**overrides) if overrides else ScenarioConfig()
    return generate_scenario(config, seed)


def desk_solver(**overrides) -> SolverConfig:
    base = dict(
        power=float(dbm_to_milliwatts(0.0)),
        noise=float(dbm_to_milliwatts(-90.0)),
        rf_chains=7,
        max_outer_iterations=30,
        objective_tol=1e-6,
        rho=0.7,
        seed=17,
    )
    base.update(overrides)
    return SolverConfig(**base)
