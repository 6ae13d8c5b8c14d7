import numpy as np
import pytest

from pelvidrr.geometry import LandmarkSet
from pelvidrr.phantom import PhantomSpec, generate_phantom
from pelvidrr.projector import CameraModel


NEUTRAL_LANDMARKS = LandmarkSet(
    asis_left=np.array([120.0, 0.0, 0.0]),
    asis_right=np.array([-120.0, 0.0, 0.0]),
    pt_left=np.array([30.0, 0.0, -100.0]),
    pt_right=np.array([-30.0, 0.0, -100.0]),
)


def random_landmarks(rng: np.random.Generator) -> LandmarkSet:
    """Neutral-ish landmark set with +/-25 mm positional jitter per point."""
    base = NEUTRAL_LANDMARKS.points()
    jitter = rng.uniform(-25.0, 25.0, size=(4, 3))
    p = base + jitter
    return LandmarkSet(asis_left=p[0], asis_right=p[1], pt_left=p[2], pt_right=p[3])


@pytest.fixture
def neutral_landmarks() -> LandmarkSet:
    return NEUTRAL_LANDMARKS


@pytest.fixture(scope="session")
def small_phantom():
    """Coarse phantom (48^3 @ 4 mm) for fast rendering tests."""
    return generate_phantom(PhantomSpec(seed=11, dims=(48, 48, 48), spacing_mm=(4.0, 4.0, 4.0)))


@pytest.fixture(scope="session")
def small_camera() -> CameraModel:
    return CameraModel(detector_pixels=(64, 64), detector_pixel_mm=(6.0, 6.0))
