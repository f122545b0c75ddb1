import numpy as np
import pytest

from magtopo.materials import BHModel
from magtopo.mesh import MotorGeometry, generate_motor_mesh
from magtopo.objective import TargetCurve, build_gap_circle


@pytest.fixture(scope="session")
def motor_mesh():
    return generate_motor_mesh(MotorGeometry(), 0.002)


@pytest.fixture(scope="session")
def coarse_mesh():
    # 324 elements, 36 of them design: small enough for full finite-difference sweeps
    return generate_motor_mesh(MotorGeometry(), 0.008)


@pytest.fixture(scope="session")
def model():
    return BHModel()


@pytest.fixture(scope="session")
def target():
    return TargetCurve()


@pytest.fixture(scope="session")
def gap(motor_mesh):
    return build_gap_circle(motor_mesh, 0.0525, 720)


@pytest.fixture(scope="session")
def coarse_gap(coarse_mesh):
    return build_gap_circle(coarse_mesh, 0.0525, 720)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
