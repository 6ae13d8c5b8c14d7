"""Procedural pelvis-like phantoms with exactly known landmarks.

The bone is a union of simple primitives: two iliac-wing ellipsoids, a pubic
arch (two pubic bodies plus a connecting bar), and a sacral box, all inside
a soft-tissue body ellipsoid. Per-patient shape variation scales the wing,
pubic, and sacral primitives independently (uniform within ``1 +/- jitter``).

ASIS landmarks sit at the anterior poles of the iliac wings and PT landmarks
at the anterior poles of the pubic bodies, so their positions are analytic
functions of the jitter factors. At zero jitter all four landmarks share one
anterior plane and the PSI is exactly zero; the mask is exactly mirror
symmetric about x = 0.

Occupancy is supersampled 2x per axis and averaged, which antialiases the
attenuation volume; the binary mask is bone coverage >= 0.5. Everything is a
pure function of the spec, so identical seeds reproduce identical volumes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .geometry import LandmarkSet
from .volume_io import ATTENUATION, MASK, Volume3


class PhantomError(ValueError):
    """The phantom spec produced an invalid phantom (e.g. landmarks outside)."""


# Nominal geometry in mm for a volume whose smallest half-extent is 127 mm
# (the 128^3 @ 2 mm default); everything scales with the actual half-extent.
_REFERENCE_HALF_EXTENT = 127.0
_BODY_CENTER = (0.0, 0.0, 0.0)
_BODY_AXES = (120.0, 95.0, 124.0)
_WING_CENTER = (56.0, 14.0, 38.0)  # +x side; the other wing is mirrored
_WING_AXES = (30.0, 26.0, 44.0)
_PUBIS_CENTER = (22.0, 28.0, -40.0)
_PUBIS_AXES = (16.0, 12.0, 14.0)
_BAR_CENTER = (0.0, 30.0, -44.0)
_BAR_AXES = (26.0, 9.0, 10.0)
_SACRUM_CENTER = (0.0, -30.0, 28.0)
_SACRUM_HALF = (26.0, 22.0, 40.0)


@dataclass(frozen=True)
class PhantomSpec:
    seed: int = 0
    dims: tuple[int, int, int] = (128, 128, 128)
    spacing_mm: tuple[float, float, float] = (2.0, 2.0, 2.0)
    jitter: float = 0.15  # half-range of the uniform per-primitive scale factors
    soft_tissue_level: float = 0.02  # attenuation per mm
    bone_level: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in self.spacing_mm))
        if any(d < 2 for d in self.dims):
            raise PhantomError(f"phantom dims must be >= 2 per axis, got {self.dims}")
        if any(s <= 0 for s in self.spacing_mm):
            raise PhantomError(f"spacing must be > 0, got {self.spacing_mm}")
        if not 0.0 <= self.jitter < 1.0:
            raise PhantomError(f"jitter must be in [0, 1), got {self.jitter}")
        if not 0.0 <= self.soft_tissue_level <= self.bone_level:
            raise PhantomError("need 0 <= soft_tissue_level <= bone_level")


def _subgrid(n: int, spacing: float, origin: float) -> np.ndarray:
    # 2x supersampling: voxel centers +/- spacing/4
    return (origin - spacing / 4.0 + np.arange(2 * n) * (spacing / 2.0)).astype(np.float32)


def _ellipsoid(xs, ys, zs, center, axes) -> np.ndarray:
    qx = ((xs - center[0]) / axes[0]) ** 2
    qy = ((ys - center[1]) / axes[1]) ** 2
    qz = ((zs - center[2]) / axes[2]) ** 2
    return (qz[:, None, None] + qy[None, :, None] + qx[None, None, :]) <= 1.0


def _box(xs, ys, zs, center, half) -> np.ndarray:
    bx = np.abs(xs - center[0]) <= half[0]
    by = np.abs(ys - center[1]) <= half[1]
    bz = np.abs(zs - center[2]) <= half[2]
    return bz[:, None, None] & by[None, :, None] & bx[None, None, :]


def _pool2(occ: np.ndarray) -> np.ndarray:
    nz, ny, nx = (s // 2 for s in occ.shape)
    return occ.reshape(nz, 2, ny, 2, nx, 2).mean(axis=(1, 3, 5), dtype=np.float32)


def _mirror_x(center, axes_or_half):
    return ((-center[0], center[1], center[2]), axes_or_half)


def generate_phantom(spec: PhantomSpec) -> tuple[Volume3, Volume3, LandmarkSet]:
    """Build (attenuation volume, bone mask, landmarks) from ``spec``."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))
    lo = 1.0 - spec.jitter
    hi = 1.0 + spec.jitter
    s_wing = rng.uniform(lo, hi)
    s_pubis = rng.uniform(lo, hi)
    s_sacrum = rng.uniform(lo, hi)

    nx, ny, nz = spec.dims
    sx, sy, sz = spec.spacing_mm
    half_extent = ((nx - 1) * sx / 2.0, (ny - 1) * sy / 2.0, (nz - 1) * sz / 2.0)
    origin = (-half_extent[0], -half_extent[1], -half_extent[2])
    scale = min(half_extent) / _REFERENCE_HALF_EXTENT

    def sized(nominal, factor=1.0):
        return tuple(v * factor * scale for v in nominal)

    xs = _subgrid(nx, sx, origin[0])
    ys = _subgrid(ny, sy, origin[1])
    zs = _subgrid(nz, sz, origin[2])

    wing = (sized(_WING_CENTER), sized(_WING_AXES, s_wing))
    pubis = (sized(_PUBIS_CENTER), sized(_PUBIS_AXES, s_pubis))
    bar = (sized(_BAR_CENTER), sized(_BAR_AXES, s_pubis))
    bone_occ = _ellipsoid(xs, ys, zs, *wing)
    bone_occ |= _ellipsoid(xs, ys, zs, *_mirror_x(*wing))
    bone_occ |= _ellipsoid(xs, ys, zs, *pubis)
    bone_occ |= _ellipsoid(xs, ys, zs, *_mirror_x(*pubis))
    bone_occ |= _ellipsoid(xs, ys, zs, *bar)
    bone_occ |= _box(xs, ys, zs, sized(_SACRUM_CENTER), sized(_SACRUM_HALF, s_sacrum))
    body_occ = _ellipsoid(xs, ys, zs, sized(_BODY_CENTER), sized(_BODY_AXES))

    bone_cov = _pool2(bone_occ)
    body_cov = _pool2(body_occ)
    attenuation = (
        np.float32(spec.soft_tissue_level) * body_cov
        + np.float32(spec.bone_level - spec.soft_tissue_level) * bone_cov
    )
    mask = (bone_cov >= 0.5).astype(np.uint8)

    volume = Volume3(data=attenuation, spacing=spec.spacing_mm, origin=origin, kind=ATTENUATION)
    mask_vol = Volume3(data=mask, spacing=spec.spacing_mm, origin=origin, kind=MASK)

    asis_y = (_WING_CENTER[1] + _WING_AXES[1] * s_wing) * scale
    pt_y = (_PUBIS_CENTER[1] + _PUBIS_AXES[1] * s_pubis) * scale
    landmarks = LandmarkSet(
        asis_left=np.array([_WING_CENTER[0] * scale, asis_y, _WING_CENTER[2] * scale]),
        asis_right=np.array([-_WING_CENTER[0] * scale, asis_y, _WING_CENTER[2] * scale]),
        pt_left=np.array([_PUBIS_CENTER[0] * scale, pt_y, _PUBIS_CENTER[2] * scale]),
        pt_right=np.array([-_PUBIS_CENTER[0] * scale, pt_y, _PUBIS_CENTER[2] * scale]),
    )
    for point in landmarks.points():
        if np.any(np.abs(point) > np.asarray(half_extent)):
            raise PhantomError(f"landmark {point} falls outside the volume grid")
    return volume, mask_vol, landmarks


def phantom_seed(global_seed: int, index: int) -> int:
    """Stable per-phantom seed derived from a run seed and patient index."""
    token = f"{global_seed}|phantom|{index}".encode("utf-8")
    return int.from_bytes(hashlib.sha256(token).digest()[:8], "little")
