import numpy as np
import pytest

from pelvidrr.geometry import (
    DegenerateLandmarksError,
    LandmarkSet,
    RigidTransform,
    TransformBounds,
    angle_difference_deg,
    apply_transform,
    compute_psi,
    fit_app_plane,
    psi_of_posed_patient,
    sample_transform,
    seeded_stream,
)
from conftest import random_landmarks


def _random_transform(rng):
    return RigidTransform(
        euler_deg=tuple(rng.uniform(-180, 180, size=3)),
        translation_mm=tuple(rng.uniform(-50, 50, size=3)),
        pivot_mm=tuple(rng.uniform(-30, 30, size=3)),
    )


def test_identity_leaves_points_unchanged():
    rng = np.random.default_rng(0)
    p = rng.uniform(-100, 100, size=(50, 3))
    assert np.array_equal(RigidTransform().apply(p), p)


def test_quarter_turn_about_x():
    t = RigidTransform(euler_deg=(90.0, 0.0, 0.0))
    out = apply_transform(t, (0.0, 1.0, 0.0))
    assert np.allclose(out, (0.0, 0.0, 1.0), atol=1e-9)


def test_inverse_composition_roundtrip():
    rng = np.random.default_rng(1)
    for _ in range(50):
        t = _random_transform(rng)
        p = rng.uniform(-200, 200, size=(20, 3))
        back = t.apply_inverse(t.apply(p))
        assert np.max(np.abs(back - p)) < 1e-9


def test_rotation_is_orthonormal():
    rng = np.random.default_rng(2)
    for _ in range(100):
        r = _random_transform(rng).rotation()
        assert np.max(np.abs(r @ r.T - np.eye(3))) < 1e-9
        assert abs(np.linalg.det(r) - 1.0) < 1e-9


def test_zero_bounds_sample_is_identity():
    rng = np.random.default_rng(3)
    t = sample_transform(rng, TransformBounds(0, 0, 0, 0))
    assert t.euler_deg == (0.0, 0.0, 0.0)
    assert t.translation_mm == (0.0, 0.0, 0.0)


def test_sampling_matches_isotropic_bounds():
    rng = np.random.default_rng(4)
    bounds = TransformBounds(rot_x_deg=15, rot_y_deg=15, rot_z_deg=15, trans_mm=20)
    transforms = [sample_transform(rng, bounds) for _ in range(50_000)]
    draws = np.array([t.euler_deg + t.translation_mm for t in transforms])
    for col, b in zip(draws.T, (15, 15, 15, 20, 20, 20)):
        assert col.min() >= -b and col.max() <= b
        assert abs(col.mean()) <= 0.02 * b
        assert col.max() > 0.9 * b and col.min() < -0.9 * b


def test_sampling_matches_anisotropic_bounds():
    bounds = TransformBounds(rot_x_deg=15, rot_y_deg=5, rot_z_deg=5, trans_mm=20)
    rng = np.random.default_rng(5)
    eulers = np.array([sample_transform(rng, bounds).euler_deg for _ in range(100_000)])
    assert eulers[:, 0].min() >= -15 and eulers[:, 0].max() <= 15
    assert eulers[:, 0].max() > 14.5 and eulers[:, 0].min() < -14.5
    for axis in (1, 2):
        assert eulers[:, axis].min() >= -5 and eulers[:, axis].max() <= 5
        assert eulers[:, axis].max() > 4.8 and eulers[:, axis].min() < -4.8
        assert abs(eulers[:, axis].mean()) <= 0.02 * 5


def test_identical_streams_reproduce_transforms():
    bounds = TransformBounds(15, 5, 5, 20)
    a = [sample_transform(seeded_stream(7, "p1", i), bounds) for i in range(10)]
    b = [sample_transform(seeded_stream(7, "p1", i), bounds) for i in range(10)]
    assert a == b
    c = [sample_transform(seeded_stream(8, "p1", i), bounds) for i in range(10)]
    assert a != c


# ---------------------------------------------------------------------------
# APP plane and PSI


def test_app_plane_neutral_normal_is_anterior(neutral_landmarks):
    point, normal = fit_app_plane(neutral_landmarks)
    assert np.allclose(normal, (0.0, 1.0, 0.0), atol=1e-12)
    # the plane passes through the defining points
    for p in (neutral_landmarks.asis_left, neutral_landmarks.asis_right):
        assert abs(np.dot(p - point, normal)) < 1e-9


def test_app_plane_rotates_with_landmarks(neutral_landmarks):
    t = RigidTransform(euler_deg=(10.0, 0.0, 0.0))
    _, normal = fit_app_plane(neutral_landmarks.transformed(t))
    expected = np.array([0.0, np.cos(np.deg2rad(10.0)), np.sin(np.deg2rad(10.0))])
    assert np.max(np.abs(normal - expected)) < 1e-9


def test_app_plane_degenerate_cases(neutral_landmarks):
    coincident = LandmarkSet(
        asis_left=neutral_landmarks.asis_left,
        asis_right=neutral_landmarks.asis_left,
        pt_left=neutral_landmarks.pt_left,
        pt_right=neutral_landmarks.pt_right,
    )
    with pytest.raises(DegenerateLandmarksError):
        fit_app_plane(coincident)
    collinear = LandmarkSet(
        asis_left=np.array([1.0, 0.0, 0.0]),
        asis_right=np.array([-1.0, 0.0, 0.0]),
        pt_left=np.array([3.0, 0.0, 0.0]),
        pt_right=np.array([5.0, 0.0, 0.0]),
    )
    with pytest.raises(DegenerateLandmarksError):
        fit_app_plane(collinear)


def test_psi_neutral_is_zero(neutral_landmarks):
    assert compute_psi(neutral_landmarks) == 0.0


def test_psi_tracks_applied_tilt(neutral_landmarks):
    tilted = neutral_landmarks.transformed(RigidTransform(euler_deg=(12.0, 0.0, 0.0)))
    assert abs(compute_psi(tilted) - 12.0) < 1e-9


def test_psi_translation_invariance_is_exact(neutral_landmarks):
    rng = np.random.default_rng(6)
    for _ in range(25):
        lm = random_landmarks(rng)
        shift = rng.uniform(-100, 100, size=3)
        moved = LandmarkSet(
            asis_left=lm.asis_left + shift,
            asis_right=lm.asis_right + shift,
            pt_left=lm.pt_left + shift,
            pt_right=lm.pt_right + shift,
        )
        assert abs(compute_psi(moved) - compute_psi(lm)) < 1e-12


def test_psi_equivariance_under_x_rotation():
    rng = np.random.default_rng(7)
    for _ in range(100):
        lm = random_landmarks(rng)
        psi0 = compute_psi(lm)
        theta = rng.uniform(-90, 90)
        psi1 = compute_psi(lm.transformed(RigidTransform(euler_deg=(theta, 0.0, 0.0))))
        assert abs(angle_difference_deg(psi1, psi0) - theta) < 1e-6


def test_out_of_plane_rotations_barely_move_neutral_psi(neutral_landmarks):
    for ry in np.linspace(-5, 5, 11):
        for rz in np.linspace(-5, 5, 11):
            posed = neutral_landmarks.transformed(RigidTransform(euler_deg=(0.0, ry, rz)))
            assert abs(compute_psi(posed)) < 1.0


def test_posed_patient_psi(neutral_landmarks):
    assert psi_of_posed_patient(neutral_landmarks, RigidTransform()) == compute_psi(
        neutral_landmarks
    )
    for theta in (-15.0, -3.5, 4.0, 15.0):
        t = RigidTransform(euler_deg=(theta, 0.0, 0.0), pivot_mm=(10.0, -20.0, 5.0))
        assert abs(psi_of_posed_patient(neutral_landmarks, t) - theta) < 1e-9
    t = RigidTransform(translation_mm=(50.0, -30.0, 80.0))
    assert psi_of_posed_patient(neutral_landmarks, t) == 0.0
