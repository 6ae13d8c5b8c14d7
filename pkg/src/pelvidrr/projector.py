"""Cone-beam ray-casting: DRR intensities and projected binary masks.

Geometry: point source at (0, +SOD, 0) mm, planar detector in the plane
y = -(SDD - SOD) with its center on the y-axis, u-axis along +x and v-axis
along +z. The anatomy is posed by a rigid transform while the camera stays
fixed; rays are marched in the volume's own frame by pushing source and
pixel positions through the inverse transform.

Each pixel integrates trilinearly interpolated attenuation along its ray
with a fixed marching step (composite midpoint rule; the final partial
interval is weighted by its true length, so constant regions integrate
exactly). Samples outside the voxel-center grid contribute zero. Mask
projection reuses the identical sample positions and lights a pixel when
any interpolated sample exceeds the occupancy threshold.

Pixel values are computed independently, so images are bitwise identical
for any number of threads; parallelism (numba ``prange``) only spreads
pixels across cores. Use :func:`set_render_threads` to bound it.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

# The built-in workqueue layer is always available and keeps stderr quiet on
# machines without a recent TBB; results are thread-layer independent anyway.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numba as nb
import numpy as np

from .geometry import RigidTransform
from .volume_io import ATTENUATION, INTENSITY, MASK, Image2, Volume3


class RenderError(ValueError):
    """Invalid renderer input (wrong volume kind, degenerate camera, ...)."""


class RenderJobError(RuntimeError):
    """A batch job failed; carries the job index and volume id."""

    def __init__(self, job_index: int, volume_id: str, cause: Exception):
        super().__init__(f"render job {job_index} (volume {volume_id!r}): {cause}")
        self.job_index = job_index
        self.volume_id = volume_id


@dataclass(frozen=True)
class CameraModel:
    """Point source + planar detector (cone-beam pinhole geometry)."""

    source_to_detector_mm: float = 1200.0
    source_to_isocenter_mm: float = 800.0
    detector_pixels: tuple[int, int] = (256, 256)  # (nu, nv)
    detector_pixel_mm: tuple[float, float] = (1.5, 1.5)  # (su, sv)

    def __post_init__(self):
        object.__setattr__(self, "source_to_detector_mm", float(self.source_to_detector_mm))
        object.__setattr__(self, "source_to_isocenter_mm", float(self.source_to_isocenter_mm))
        object.__setattr__(self, "detector_pixels", tuple(int(n) for n in self.detector_pixels))
        object.__setattr__(self, "detector_pixel_mm", tuple(float(s) for s in self.detector_pixel_mm))
        sdd, sod = self.source_to_detector_mm, self.source_to_isocenter_mm
        if not 0 < sod < sdd:
            raise RenderError(f"camera requires 0 < SOD < SDD, got SOD={sod}, SDD={sdd}")
        if any(n < 1 for n in self.detector_pixels):
            raise RenderError(f"detector needs >= 1 pixel per axis, got {self.detector_pixels}")
        if any(s <= 0 for s in self.detector_pixel_mm):
            raise RenderError(f"detector pixel size must be > 0, got {self.detector_pixel_mm}")

    @property
    def magnification(self) -> float:
        """Scale factor from the isocenter plane onto the detector."""
        return self.source_to_detector_mm / self.source_to_isocenter_mm

    def source_position(self) -> np.ndarray:
        return np.array([0.0, self.source_to_isocenter_mm, 0.0])

    def pixel_centers(self) -> np.ndarray:
        """World positions of all pixel centers, shape (nv, nu, 3)."""
        nu, nv = self.detector_pixels
        su, sv = self.detector_pixel_mm
        us = (np.arange(nu, dtype=np.float64) - (nu - 1) / 2.0) * su
        vs = (np.arange(nv, dtype=np.float64) - (nv - 1) / 2.0) * sv
        grid = np.empty((nv, nu, 3))
        grid[..., 0] = us[np.newaxis, :]
        grid[..., 1] = -(self.source_to_detector_mm - self.source_to_isocenter_mm)
        grid[..., 2] = vs[:, np.newaxis]
        return grid


@dataclass(frozen=True)
class RenderSettings:
    """Ray-march step, mask occupancy cutoff, and per-image normalization."""

    step_mm: float | None = None  # None: half the smallest voxel spacing
    mask_threshold: float = 0.5
    normalize: bool = True

    def __post_init__(self):
        if self.step_mm is not None and self.step_mm <= 0:
            raise RenderError(f"step_mm must be > 0, got {self.step_mm}")
        if not 0.0 < self.mask_threshold < 1.0:
            raise RenderError(f"mask_threshold must be in (0, 1), got {self.mask_threshold}")

    def resolve_step(self, spacing: tuple[float, float, float]) -> float:
        if self.step_mm is not None:
            return float(self.step_mm)
        return 0.5 * min(spacing)


@nb.njit(cache=True, inline="always")
def _trilinear(data, fx, fy, fz):
    nz, ny, nx = data.shape
    if fx < 0.0 or fy < 0.0 or fz < 0.0 or fx > nx - 1.0 or fy > ny - 1.0 or fz > nz - 1.0:
        return 0.0
    if nx > 1:
        i0 = int(fx)
        if i0 > nx - 2:
            i0 = nx - 2
        txw = fx - i0
        i1 = i0 + 1
    else:
        i0 = 0
        i1 = 0
        txw = 0.0
    if ny > 1:
        j0 = int(fy)
        if j0 > ny - 2:
            j0 = ny - 2
        tyw = fy - j0
        j1 = j0 + 1
    else:
        j0 = 0
        j1 = 0
        tyw = 0.0
    if nz > 1:
        k0 = int(fz)
        if k0 > nz - 2:
            k0 = nz - 2
        tzw = fz - k0
        k1 = k0 + 1
    else:
        k0 = 0
        k1 = 0
        tzw = 0.0
    c000 = data[k0, j0, i0]
    c100 = data[k0, j0, i1]
    c010 = data[k0, j1, i0]
    c110 = data[k0, j1, i1]
    c001 = data[k1, j0, i0]
    c101 = data[k1, j0, i1]
    c011 = data[k1, j1, i0]
    c111 = data[k1, j1, i1]
    c00 = c000 * (1.0 - txw) + c100 * txw
    c10 = c010 * (1.0 - txw) + c110 * txw
    c01 = c001 * (1.0 - txw) + c101 * txw
    c11 = c011 * (1.0 - txw) + c111 * txw
    c0 = c00 * (1.0 - tyw) + c10 * tyw
    c1 = c01 * (1.0 - tyw) + c11 * tyw
    return c0 * (1.0 - tzw) + c1 * tzw


@nb.njit(cache=True, inline="always")
def _slab_range(sx, sy, sz, dx, dy, dz, lox, loy, loz, hix, hiy, hiz):
    tnear = 0.0
    tfar = 1.0e300
    # x slab
    if dx > 1e-12 or dx < -1e-12:
        t1 = (lox - sx) / dx
        t2 = (hix - sx) / dx
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > tnear:
            tnear = t1
        if t2 < tfar:
            tfar = t2
    elif sx < lox or sx > hix:
        return 0.0, -1.0
    # y slab
    if dy > 1e-12 or dy < -1e-12:
        t1 = (loy - sy) / dy
        t2 = (hiy - sy) / dy
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > tnear:
            tnear = t1
        if t2 < tfar:
            tfar = t2
    elif sy < loy or sy > hiy:
        return 0.0, -1.0
    # z slab
    if dz > 1e-12 or dz < -1e-12:
        t1 = (loz - sz) / dz
        t2 = (hiz - sz) / dz
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > tnear:
            tnear = t1
        if t2 < tfar:
            tfar = t2
    elif sz < loz or sz > hiz:
        return 0.0, -1.0
    return tnear, tfar


@nb.njit(cache=True, parallel=True)
def _integrate_rays(data, ox, oy, oz, isx, isy, isz, lox, loy, loz, hix, hiy, hiz,
                    srcx, srcy, srcz, dirs, step, out):
    n = dirs.shape[0]
    for p in nb.prange(n):
        dx = dirs[p, 0]
        dy = dirs[p, 1]
        dz = dirs[p, 2]
        tnear, tfar = _slab_range(srcx, srcy, srcz, dx, dy, dz, lox, loy, loz, hix, hiy, hiz)
        acc = 0.0
        if tfar > tnear:
            length = tfar - tnear
            nfull = int(length / step)
            rem = length - nfull * step
            for k in range(nfull):
                t = tnear + (k + 0.5) * step
                fx = (srcx + t * dx - ox) / isx
                fy = (srcy + t * dy - oy) / isy
                fz = (srcz + t * dz - oz) / isz
                acc += step * _trilinear(data, fx, fy, fz)
            if rem > 1e-12:
                t = tnear + nfull * step + 0.5 * rem
                fx = (srcx + t * dx - ox) / isx
                fy = (srcy + t * dy - oy) / isy
                fz = (srcz + t * dz - oz) / isz
                acc += rem * _trilinear(data, fx, fy, fz)
        out[p] = acc


@nb.njit(cache=True, parallel=True)
def _any_sample_above(data, ox, oy, oz, isx, isy, isz, lox, loy, loz, hix, hiy, hiz,
                      srcx, srcy, srcz, dirs, step, threshold, out):
    n = dirs.shape[0]
    for p in nb.prange(n):
        dx = dirs[p, 0]
        dy = dirs[p, 1]
        dz = dirs[p, 2]
        tnear, tfar = _slab_range(srcx, srcy, srcz, dx, dy, dz, lox, loy, loz, hix, hiy, hiz)
        hit = np.uint8(0)
        if tfar > tnear:
            length = tfar - tnear
            nfull = int(length / step)
            rem = length - nfull * step
            for k in range(nfull):
                t = tnear + (k + 0.5) * step
                fx = (srcx + t * dx - ox) / isx
                fy = (srcy + t * dy - oy) / isy
                fz = (srcz + t * dz - oz) / isz
                if _trilinear(data, fx, fy, fz) > threshold:
                    hit = np.uint8(1)
            if rem > 1e-12:
                t = tnear + nfull * step + 0.5 * rem
                fx = (srcx + t * dx - ox) / isx
                fy = (srcy + t * dy - oy) / isy
                fz = (srcz + t * dz - oz) / isz
                if _trilinear(data, fx, fy, fz) > threshold:
                    hit = np.uint8(1)
        out[p] = hit


def set_render_threads(n: int) -> int:
    """Bound rendering parallelism; 0 means all available cores.

    Returns the thread count actually in effect. Results never depend on it.
    """
    limit = nb.config.NUMBA_NUM_THREADS
    threads = limit if n == 0 else max(1, min(int(n), limit))
    nb.set_num_threads(threads)
    return threads


def _rays_in_volume_frame(vol: Volume3, t: RigidTransform, cam: CameraModel):
    """Source position and unit ray directions, expressed in the volume frame."""
    src = t.apply_inverse(cam.source_position())
    pix = t.apply_inverse(cam.pixel_centers().reshape(-1, 3))
    dirs = pix - src
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return src, np.ascontiguousarray(dirs)


def _march_args(vol: Volume3, settings: RenderSettings):
    ox, oy, oz = vol.origin
    sx, sy, sz = vol.spacing
    nx, ny, nz = vol.dims
    lo = (ox, oy, oz)
    hi = (ox + (nx - 1) * sx, oy + (ny - 1) * sy, oz + (nz - 1) * sz)
    return (ox, oy, oz, sx, sy, sz, *lo, *hi), settings.resolve_step(vol.spacing)


def render_drr(vol: Volume3, t: RigidTransform, cam: CameraModel,
               settings: RenderSettings = RenderSettings()) -> Image2:
    """Line-integral DRR of an attenuation volume posed by ``t``.

    With ``settings.normalize`` the image is scaled so its maximum is 1;
    an all-zero image stays zero.
    """
    if vol.kind != ATTENUATION:
        raise RenderError(f"render_drr needs an attenuation volume, got {vol.kind!r}")
    grid_args, step = _march_args(vol, settings)
    src, dirs = _rays_in_volume_frame(vol, t, cam)
    out = np.empty(dirs.shape[0], dtype=np.float64)
    _integrate_rays(vol.data, *grid_args, src[0], src[1], src[2], dirs, step, out)
    if settings.normalize:
        peak = out.max()
        if peak > 0.0:
            out = out / peak
    nu, nv = cam.detector_pixels
    return Image2(
        data=out.reshape(nv, nu).astype(np.float32),
        pixel_spacing=cam.detector_pixel_mm,
        kind=INTENSITY,
    )


def project_mask(mask: Volume3, t: RigidTransform, cam: CameraModel,
                 settings: RenderSettings = RenderSettings()) -> Image2:
    """Binary silhouette of a mask volume posed by ``t``.

    A pixel is 1 iff any ray sample of the interpolated mask exceeds
    ``settings.mask_threshold``; sampling geometry matches render_drr.
    """
    if mask.kind != MASK:
        raise RenderError(f"project_mask needs a mask volume, got {mask.kind!r}")
    grid_args, step = _march_args(mask, settings)
    src, dirs = _rays_in_volume_frame(mask, t, cam)
    out = np.empty(dirs.shape[0], dtype=np.uint8)
    _any_sample_above(
        mask.data.astype(np.float32), *grid_args, src[0], src[1], src[2], dirs, step,
        float(settings.mask_threshold), out,
    )
    nu, nv = cam.detector_pixels
    return Image2(data=out.reshape(nv, nu), pixel_spacing=cam.detector_pixel_mm, kind=MASK)


def render_batch(volumes, jobs, cam: CameraModel,
                 settings: RenderSettings = RenderSettings()):
    """Render (DRR, projected mask) for each (volume id, transform) job.

    ``volumes`` maps volume id -> (attenuation Volume3, mask Volume3); they
    are shared read-only across jobs. Output order matches job order and
    every element is bitwise identical to the single-image operations.
    """
    results = []
    for index, (volume_id, t) in enumerate(jobs):
        try:
            vol, mask = volumes[volume_id]
            results.append((
                render_drr(vol, t, cam, settings),
                project_mask(mask, t, cam, settings),
            ))
        except Exception as e:
            raise RenderJobError(index, str(volume_id), e) from e
    return results
