"""Rigid transforms, pose sampling, and the pelvic sagittal inclination angle.

The anterior pelvic plane (APP) passes through both anterior superior iliac
spines and the midpoint of the two pubic tubercles. PSI is the signed angle
of the APP normal within the sagittal (y-z) plane: ``atan2(nz, ny)`` in
degrees, zero when the normal points anterior (+y) and positive when it tilts
superior. The angle depends only on landmark orientation, never position.

Rotations are extrinsic X then Y then Z about the world axes, so the combined
matrix is ``Rz @ Ry @ Rx``, and transforms rotate about an explicit pivot:
``p' = R @ (p - pivot) + pivot + translation``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np


class DegenerateLandmarksError(ValueError):
    """The landmarks do not define a plane (collinear or coincident points)."""


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    return a


def rotation_x(deg: float) -> np.ndarray:
    r = np.deg2rad(deg)
    c, s = np.cos(r), np.sin(r)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(deg: float) -> np.ndarray:
    r = np.deg2rad(deg)
    c, s = np.cos(r), np.sin(r)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(deg: float) -> np.ndarray:
    r = np.deg2rad(deg)
    c, s = np.cos(r), np.sin(r)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (Euler degrees, extrinsic X->Y->Z) + translation about a pivot."""

    euler_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)
    translation_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)
    pivot_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "euler_deg", tuple(float(v) for v in self.euler_deg))
        object.__setattr__(self, "translation_mm", tuple(float(v) for v in self.translation_mm))
        object.__setattr__(self, "pivot_mm", tuple(float(v) for v in self.pivot_mm))

    def rotation(self) -> np.ndarray:
        rx, ry, rz = self.euler_deg
        return rotation_z(rz) @ rotation_y(ry) @ rotation_x(rx)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map world points (3,) or (N, 3) through the transform."""
        p = np.asarray(points, dtype=np.float64)
        pivot = np.asarray(self.pivot_mm)
        t = np.asarray(self.translation_mm)
        return (p - pivot) @ self.rotation().T + pivot + t

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        """Map points back through the inverse transform."""
        p = np.asarray(points, dtype=np.float64)
        pivot = np.asarray(self.pivot_mm)
        t = np.asarray(self.translation_mm)
        return (p - pivot - t) @ self.rotation() + pivot

    def with_pivot(self, pivot_mm) -> "RigidTransform":
        return replace(self, pivot_mm=tuple(float(v) for v in _vec3(pivot_mm)))


@dataclass(frozen=True)
class TransformBounds:
    """Half-ranges for uniform pose sampling: degrees per axis, one mm range."""

    rot_x_deg: float
    rot_y_deg: float
    rot_z_deg: float
    trans_mm: float

    def __post_init__(self):
        for name in ("rot_x_deg", "rot_y_deg", "rot_z_deg", "trans_mm"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class LandmarkSet:
    """The four PSI-defining points in world mm."""

    asis_left: np.ndarray
    asis_right: np.ndarray
    pt_left: np.ndarray
    pt_right: np.ndarray

    def __post_init__(self):
        for name in ("asis_left", "asis_right", "pt_left", "pt_right"):
            object.__setattr__(self, name, _vec3(getattr(self, name)))

    def points(self) -> np.ndarray:
        """All four landmarks as a (4, 3) array, ASIS pair first."""
        return np.stack([self.asis_left, self.asis_right, self.pt_left, self.pt_right])

    def transformed(self, t: RigidTransform) -> "LandmarkSet":
        p = t.apply(self.points())
        return LandmarkSet(asis_left=p[0], asis_right=p[1], pt_left=p[2], pt_right=p[3])


def apply_transform(t: RigidTransform, point) -> np.ndarray:
    """Apply ``t`` to a single world point."""
    return t.apply(_vec3(point))


def sample_transform(rng: np.random.Generator, bounds: TransformBounds) -> RigidTransform:
    """Draw a pose uniformly within ``bounds``, each component independent.

    Draw order is fixed (rx, ry, rz, tx, ty, tz) so a given stream state
    always yields the same transform. The pivot is left at the origin;
    callers rotating a volume set it to the volume center.
    """
    rx = rng.uniform(-bounds.rot_x_deg, bounds.rot_x_deg)
    ry = rng.uniform(-bounds.rot_y_deg, bounds.rot_y_deg)
    rz = rng.uniform(-bounds.rot_z_deg, bounds.rot_z_deg)
    tx = rng.uniform(-bounds.trans_mm, bounds.trans_mm)
    ty = rng.uniform(-bounds.trans_mm, bounds.trans_mm)
    tz = rng.uniform(-bounds.trans_mm, bounds.trans_mm)
    return RigidTransform(euler_deg=(rx, ry, rz), translation_mm=(tx, ty, tz))


def seeded_stream(global_seed: int, patient_id: str, sample_index: int) -> np.random.Generator:
    """Independent, platform-stable random stream for one dataset sample.

    Counter-based: the stream depends only on (global_seed, patient_id,
    sample_index), so samples can be generated in any order, or in parallel,
    without changing any draw.
    """
    token = f"{global_seed}|{patient_id}|{sample_index}".encode("utf-8")
    entropy = int.from_bytes(hashlib.sha256(token).digest()[:16], "little")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def fit_app_plane(landmarks: LandmarkSet) -> tuple[np.ndarray, np.ndarray]:
    """Anterior pelvic plane through both ASIS and the pubic-tubercle midpoint.

    Returns (point_on_plane, unit_normal). The normal orientation comes from
    a fixed cross-product order, which makes it +y for neutral symmetric
    landmarks and exactly equivariant under rigid rotation of the input.
    """
    pt_mid = (landmarks.pt_left + landmarks.pt_right) / 2.0
    a = pt_mid - landmarks.asis_left
    b = landmarks.asis_right - landmarks.asis_left
    n = np.cross(a, b)
    norm = np.linalg.norm(n)
    scale = max(np.linalg.norm(a) * np.linalg.norm(b), 1.0)
    if norm <= 1e-12 * scale:
        raise DegenerateLandmarksError(
            "ASIS pair and pubic-tubercle midpoint are collinear or coincident"
        )
    point = (landmarks.asis_left + landmarks.asis_right + pt_mid) / 3.0
    return point, n / norm


def compute_psi(landmarks: LandmarkSet) -> float:
    """PSI in degrees: signed tilt of the APP normal in the sagittal plane."""
    _, n = fit_app_plane(landmarks)
    return float(np.degrees(np.arctan2(n[2], n[1])))


def psi_of_posed_patient(landmarks: LandmarkSet, t: RigidTransform) -> float:
    """PSI after posing the patient: PSI of the transformed landmarks."""
    return compute_psi(landmarks.transformed(t))


def angle_difference_deg(a: float, b: float) -> float:
    """Signed difference a - b wrapped to (-180, 180]."""
    d = (a - b + 180.0) % 360.0 - 180.0
    return d if d != -180.0 else 180.0
