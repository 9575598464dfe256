import os

# keep the registry of the test session away from ./phasefield_runs.db
os.environ.setdefault("PHASEFIELD_DATABASE_URL", "sqlite://")

import numpy as np
import pytest
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

from app.database import init_db
from app.schemas import GridSpec, RunConfig
from app.services.spectral_core import FractionalOperator, ScalarField


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale measurements")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


# ------------------------------
# Grids and fields
# ------------------------------

@pytest.fixture
def grid1d():
    return GridSpec.create((64,))


@pytest.fixture
def grid2d():
    return GridSpec.create((32, 32))


@pytest.fixture
def op1d(grid1d):
    return FractionalOperator(grid1d)


@pytest.fixture
def op2d(grid2d):
    return FractionalOperator(grid2d)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def band_limited(grid: GridSpec, rng, modes: int = 6, mean_zero: bool = False) -> ScalarField:
    coeffs = np.zeros(grid.shape)
    low = tuple(slice(0, min(modes, n)) for n in grid.counts)
    coeffs[low] = rng.standard_normal(coeffs[low].shape)
    if mean_zero:
        coeffs.flat[0] = 0.0
    return ScalarField(grid, coeffs=coeffs)


def circle_profile(grid: GridSpec, radius: float, eps: float, center=(0.5, 0.5)) -> ScalarField:
    return ScalarField.from_function(
        grid, lambda x, y: np.tanh(np.sqrt(2.0) * (radius - np.hypot(x - center[0], y - center[1])) / eps)
    )


# ------------------------------
# Configs, output and registry
# ------------------------------

@pytest.fixture
def output_dir(tmp_path):
    path = tmp_path / "runs"
    path.mkdir()
    return path


@pytest.fixture
def small_circle_config(output_dir):
    """64^2 circle, three steps: enough for every artifact, cheap enough for the default suite."""
    return RunConfig(
        scenario="circle_2d",
        grid=GridSpec.create((64, 64)),
        eps=0.05,
        tau=1e-4,
        t_end=3e-4,
        radius=0.2,
        output_dir=str(output_dir),
        snapshot_every=2,
        diagnostics_every=1,
    )


@pytest.fixture
def session_factory():
    engine = create_engine(
        "sqlite://",
        connect_args={"check_same_thread": False},
        poolclass=StaticPool,
    )
    init_db(bind=engine)
    factory = sessionmaker(autocommit=False, autoflush=False, bind=engine)
    yield factory
    engine.dispose()


@pytest.fixture
def db_session(session_factory):
    db = session_factory()
    try:
        yield db
    finally:
        db.close()
