import numpy as np
import pytest

from config import settings
from src.services.geometry import TorusGeometry
from src.services.simulator import SimConfig


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def torus10() -> TorusGeometry:
    return TorusGeometry(side=10.0)


@pytest.fixture
def small_config() -> SimConfig:
    """64 nodes, uniform mobility; three routing steps and a 4x4 grid."""
    return SimConfig(n=64, delta=0.0, lam=0.01, slots=400, seed=3)


@pytest.fixture
def inline_runs(tmp_path, monkeypatch):
    """Threads instead of processes and a throwaway run store."""
    monkeypatch.setattr(settings, "use_process_pool", False)
    monkeypatch.setattr(settings, "run_db_path", (tmp_path / "store" / "runs.sqlite").as_posix())
    return tmp_path
