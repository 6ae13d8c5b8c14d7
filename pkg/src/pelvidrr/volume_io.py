"""Bit-exact file I/O for 3D volumes, 2D detector images, and landmark sets.

Formats
-------
Volumes
    MHD-style plain-text header (``.mhd``) plus a separate little-endian raw
    payload. Header keys: ``NDims``, ``DimSize``, ``ElementSpacing``,
    ``Offset``, ``ElementType`` (``MET_FLOAT`` or ``MET_UCHAR``),
    ``ElementDataFile``. Key order in the header is irrelevant when reading;
    unrecognized keys are rejected except for a small set of harmless
    MetaImage extras (``ObjectType``, ``BinaryData``, ...).
Images
    Raw little-endian float32 (``.f32``) plus a JSON sidecar
    ``{width, height, pixel_spacing_mm: [su, sv], kind}`` at the same path
    with a ``.json`` suffix. Binary masks can also be round-tripped through
    8-bit binary PGM (``P5``, values 0/255), which carries no spacing.
Landmarks
    JSON object ``{"asis_left": [x, y, z], ...}`` in world millimetres.

World frame
-----------
All coordinates are millimetres: +x lateral (toward anatomical left),
+y anterior, +z superior. Voxel (i, j, k) has its *center* at
``origin + (i*sx, j*sy, k*sz)``; in memory volumes are numpy arrays of
shape (nz, ny, nx) so the raw file is written x-fastest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import LandmarkSet

ATTENUATION = "attenuation_f32"
MASK = "mask_u8"
INTENSITY = "intensity_f32"

_MHD_REQUIRED = {
    "NDims",
    "DimSize",
    "ElementSpacing",
    "Offset",
    "ElementType",
    "ElementDataFile",
}
# Tolerated MetaImage extras so files from standard medical tooling still load.
_MHD_OPTIONAL = {
    "ObjectType",
    "BinaryData",
    "BinaryDataByteOrderMSB",
    "CompressedData",
    "TransformMatrix",
    "CenterOfRotation",
    "AnatomicalOrientation",
}
_ELEMENT_TYPES = {ATTENUATION: "MET_FLOAT", MASK: "MET_UCHAR"}
_ELEMENT_DTYPES = {ATTENUATION: np.dtype("<f4"), MASK: np.dtype("<u1")}


class FormatError(ValueError):
    """A file or in-memory object violates one of the formats above."""


def _fmt(x: float) -> str:
    # repr gives the shortest string that round-trips the float exactly
    return repr(float(x))


@dataclass
class Volume3:
    """Regular 3D scalar grid (attenuation or binary mask) with mm metadata."""

    data: np.ndarray  # shape (nz, ny, nx); voxel (i, j, k) is data[k, j, i]
    spacing: tuple[float, float, float]  # (sx, sy, sz), mm
    origin: tuple[float, float, float]  # world position of voxel (0,0,0) center
    kind: str  # ATTENUATION or MASK

    def __post_init__(self):
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if self.data.ndim != 3:
            raise FormatError(f"volume data must be 3D, got shape {self.data.shape}")
        if any(d < 1 for d in self.data.shape):
            raise FormatError(f"volume dims must be >= 1, got {self.dims}")
        if any(s <= 0 for s in self.spacing):
            raise FormatError(f"voxel spacing must be > 0, got {self.spacing}")
        if self.kind == ATTENUATION:
            if self.data.dtype != np.float32:
                raise FormatError("attenuation volume must be float32")
            if not np.all(np.isfinite(self.data)) or np.any(self.data < 0):
                raise FormatError("attenuation voxels must be finite and >= 0")
        elif self.kind == MASK:
            if self.data.dtype != np.uint8:
                raise FormatError("mask volume must be uint8")
            if np.any(self.data > 1):
                raise FormatError("mask voxels must be 0 or 1")
        else:
            raise FormatError(f"unknown volume kind {self.kind!r}")

    @property
    def dims(self) -> tuple[int, int, int]:
        """(nx, ny, nz)."""
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def center(self) -> np.ndarray:
        """World position of the center of the voxel-center grid."""
        d = np.asarray(self.dims, dtype=np.float64)
        s = np.asarray(self.spacing, dtype=np.float64)
        return np.asarray(self.origin, dtype=np.float64) + (d - 1) * s / 2.0


@dataclass
class Image2:
    """2D detector image: float32 intensities or a binary uint8 mask."""

    data: np.ndarray  # shape (height, width), row-major
    pixel_spacing: tuple[float, float]  # (su, sv), mm
    kind: str  # INTENSITY or MASK

    def __post_init__(self):
        self.pixel_spacing = tuple(float(s) for s in self.pixel_spacing)
        if self.data.ndim != 2:
            raise FormatError(f"image data must be 2D, got shape {self.data.shape}")
        if any(s <= 0 for s in self.pixel_spacing):
            raise FormatError(f"pixel spacing must be > 0, got {self.pixel_spacing}")
        if self.kind == INTENSITY:
            if self.data.dtype != np.float32:
                raise FormatError("intensity image must be float32")
            if not np.all(np.isfinite(self.data)) or np.any(self.data < 0):
                raise FormatError("intensity pixels must be finite and >= 0")
        elif self.kind == MASK:
            if self.data.dtype != np.uint8:
                raise FormatError("mask image must be uint8")
            if np.any(self.data > 1):
                raise FormatError("mask pixels must be 0 or 1")
        else:
            raise FormatError(f"unknown image kind {self.kind!r}")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


# ---------------------------------------------------------------------------
# Volumes


def write_volume(vol: Volume3, path: str | Path) -> None:
    """Write ``vol`` as an ``.mhd`` header plus sibling ``.raw`` payload.

    Output is byte-deterministic: the same volume always produces identical
    files.
    """
    path = Path(path)
    raw_path = path.with_suffix(".raw")
    nx, ny, nz = vol.dims
    header = (
        "NDims = 3\n"
        f"DimSize = {nx} {ny} {nz}\n"
        f"ElementSpacing = {_fmt(vol.spacing[0])} {_fmt(vol.spacing[1])} {_fmt(vol.spacing[2])}\n"
        f"Offset = {_fmt(vol.origin[0])} {_fmt(vol.origin[1])} {_fmt(vol.origin[2])}\n"
        f"ElementType = {_ELEMENT_TYPES[vol.kind]}\n"
        f"ElementDataFile = {raw_path.name}\n"
    )
    path.write_text(header, encoding="ascii")
    raw_path.write_bytes(np.ascontiguousarray(vol.data, dtype=_ELEMENT_DTYPES[vol.kind]).tobytes())


def _parse_mhd_header(path: Path) -> dict[str, str]:
    fields: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="ascii").splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'Key = value'")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if key not in _MHD_REQUIRED and key not in _MHD_OPTIONAL:
            raise FormatError(f"{path}: unknown header key {key!r}")
        if key in fields:
            raise FormatError(f"{path}: duplicate header key {key!r}")
        fields[key] = value
    missing = _MHD_REQUIRED - fields.keys()
    if missing:
        raise FormatError(f"{path}: missing header keys {sorted(missing)}")
    return fields


def read_volume(path: str | Path) -> Volume3:
    """Read an ``.mhd`` + raw volume written by :func:`write_volume`."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"volume header not found: {path}")
    fields = _parse_mhd_header(path)

    if fields["NDims"] != "3":
        raise FormatError(f"{path}: only NDims = 3 is supported")
    if fields.get("BinaryDataByteOrderMSB", "False") == "True":
        raise FormatError(f"{path}: big-endian payloads are not supported")
    if fields.get("CompressedData", "False") == "True":
        raise FormatError(f"{path}: compressed payloads are not supported")

    try:
        dims = tuple(int(t) for t in fields["DimSize"].split())
        spacing = tuple(float(t) for t in fields["ElementSpacing"].split())
        origin = tuple(float(t) for t in fields["Offset"].split())
    except ValueError as e:
        raise FormatError(f"{path}: malformed numeric header field: {e}") from e
    if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
        raise FormatError(f"{path}: DimSize/ElementSpacing/Offset must have 3 entries")

    by_element = {v: k for k, v in _ELEMENT_TYPES.items()}
    element = fields["ElementType"]
    if element not in by_element:
        raise FormatError(f"{path}: unsupported ElementType {element!r}")
    kind = by_element[element]

    raw_path = path.parent / fields["ElementDataFile"]
    if not raw_path.is_file():
        raise FileNotFoundError(f"raw payload not found: {raw_path}")
    dtype = _ELEMENT_DTYPES[kind]
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    actual = raw_path.stat().st_size
    if actual != expected:
        raise FormatError(
            f"{raw_path}: payload is {actual} bytes, header implies {expected}"
        )
    data = np.fromfile(raw_path, dtype=dtype).reshape(dims[2], dims[1], dims[0])
    if kind == ATTENUATION:
        data = data.astype(np.float32, copy=False)
    return Volume3(data=data, spacing=spacing, origin=origin, kind=kind)


# ---------------------------------------------------------------------------
# Images


def write_image(img: Image2, path: str | Path) -> None:
    """Write ``img`` to ``.f32`` raw + JSON sidecar, or to binary PGM.

    The target format follows the suffix of ``path``. PGM is only valid for
    masks and stores pixels as 0/255.
    """
    path = Path(path)
    if path.suffix == ".f32":
        sidecar = {
            "width": img.width,
            "height": img.height,
            "pixel_spacing_mm": [img.pixel_spacing[0], img.pixel_spacing[1]],
            "kind": img.kind,
        }
        path.write_bytes(np.ascontiguousarray(img.data, dtype="<f4").tobytes())
        path.with_suffix(".json").write_text(
            json.dumps(sidecar, sort_keys=True, separators=(",", ":")) + "\n",
            encoding="ascii",
        )
    elif path.suffix == ".pgm":
        if img.kind != MASK:
            raise FormatError("PGM output is only supported for mask images")
        header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
        path.write_bytes(header + (img.data * np.uint8(255)).tobytes())
    else:
        raise FormatError(f"unsupported image suffix {path.suffix!r}")


def read_image(path: str | Path) -> Image2:
    """Read an image written by :func:`write_image` (``.f32`` or ``.pgm``)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    if path.suffix == ".f32":
        sidecar_path = path.with_suffix(".json")
        if not sidecar_path.is_file():
            raise FileNotFoundError(f"image sidecar not found: {sidecar_path}")
        try:
            meta = json.loads(sidecar_path.read_text(encoding="ascii"))
        except json.JSONDecodeError as e:
            raise FormatError(f"{sidecar_path}: invalid JSON: {e}") from e
        for key in ("width", "height", "pixel_spacing_mm", "kind"):
            if key not in meta:
                raise FormatError(f"{sidecar_path}: missing key {key!r}")
        w, h = int(meta["width"]), int(meta["height"])
        su, sv = (float(s) for s in meta["pixel_spacing_mm"])
        if su <= 0 or sv <= 0:
            raise FormatError(f"{sidecar_path}: pixel spacing must be > 0")
        kind = meta["kind"]
        if kind not in (INTENSITY, MASK):
            raise FormatError(f"{sidecar_path}: unknown image kind {kind!r}")
        raw = np.fromfile(path, dtype="<f4")
        if raw.size != w * h:
            raise FormatError(f"{path}: payload is {raw.size} pixels, sidecar implies {w * h}")
        data = raw.reshape(h, w)
        if kind == MASK:
            if np.any((data != 0.0) & (data != 1.0)):
                raise FormatError(f"{path}: mask pixels must be 0 or 1")
            data = data.astype(np.uint8)
        else:
            data = data.astype(np.float32, copy=False)
        return Image2(data=data, pixel_spacing=(su, sv), kind=kind)
    if path.suffix == ".pgm":
        return _read_pgm(path)
    raise FormatError(f"unsupported image suffix {path.suffix!r}")


def _read_pgm(path: Path) -> Image2:
    blob = path.read_bytes()
    # header = magic, width, height, maxval as whitespace-separated tokens
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as e:
        raise FormatError(f"{path}: malformed PGM header") from e
    if maxval != 255:
        raise FormatError(f"{path}: PGM maxval must be 255, got {maxval}")
    pixels = np.frombuffer(blob[pos:], dtype=np.uint8)
    if pixels.size != w * h:
        raise FormatError(f"{path}: payload is {pixels.size} pixels, header implies {w * h}")
    if np.any((pixels != 0) & (pixels != 255)):
        raise FormatError(f"{path}: PGM mask pixels must be 0 or 255")
    data = (pixels.reshape(h, w) // 255).astype(np.uint8)
    # PGM carries no physical spacing
    return Image2(data=data, pixel_spacing=(1.0, 1.0), kind=MASK)


# ---------------------------------------------------------------------------
# Landmarks


def write_landmarks(landmarks: LandmarkSet, path: str | Path) -> None:
    """Write a landmark set as JSON, coordinates in world mm."""
    payload = {
        "asis_left": [float(v) for v in landmarks.asis_left],
        "asis_right": [float(v) for v in landmarks.asis_right],
        "pt_left": [float(v) for v in landmarks.pt_left],
        "pt_right": [float(v) for v in landmarks.pt_right],
    }
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n",
        encoding="ascii",
    )


def read_landmarks(path: str | Path) -> LandmarkSet:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"landmark file not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="ascii"))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON: {e}") from e
    try:
        return LandmarkSet(
            asis_left=np.asarray(payload["asis_left"], dtype=np.float64),
            asis_right=np.asarray(payload["asis_right"], dtype=np.float64),
            pt_left=np.asarray(payload["pt_left"], dtype=np.float64),
            pt_right=np.asarray(payload["pt_right"], dtype=np.float64),
        )
    except KeyError as e:
        raise FormatError(f"{path}: missing landmark {e}") from e
