import numpy as np
import pytest

from app.core.config import RunConfig
from app.core.phase import Domain
from app.physics.kinetic import InitialDataSpec, sample_initial


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    monkeypatch.delenv("VNS_THREADS", raising=False)
    monkeypatch.delenv("VNS_DETERMINISTIC", raising=False)


@pytest.fixture
def domain():
    return Domain(1.0, 1.0, 6.0)


@pytest.fixture
def box_spec():
    return InitialDataSpec(family="box", L=1.0, R=1.0)


@pytest.fixture
def box_ensemble(box_spec):
    return sample_initial(box_spec, 2000, seed=7)


@pytest.fixture
def small_gravity_config():
    return RunConfig(mode="gravity_only", family="box", particle_count=400, grid=(4, 4, 12), Zmax=6.0,
                     dt=0.05, t_end=3.5, diag_every=2, rng_seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
