"""Readers and writers for the dataset interchange formats.

The trainer talks to the dataset toolkit only through files: a JSONL
manifest (one header line, then one record per sample), raw float32 images
with JSON sidecars, binary PGM masks, and a ``sample_id,psi_pred_deg``
predictions CSV. Paths inside a manifest are relative to the manifest's
directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MANIFEST_SCHEMA_VERSION = 1


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    patient_id: str
    drr_path: str
    mask_path: str
    psi_deg: float
    fold: int


@dataclass(frozen=True)
class Manifest:
    root: Path
    task: str
    records: tuple[SampleRecord, ...]

    def fold_ids(self) -> set[int]:
        return {r.fold for r in self.records}


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    lines = [ln for ln in path.read_text(encoding="ascii").splitlines() if ln.strip()]
    if not lines:
        raise ManifestError(f"{path}: empty manifest")
    header = json.loads(lines[0])
    if header.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise ManifestError(
            f"{path}: schema_version {header.get('schema_version')!r} != {MANIFEST_SCHEMA_VERSION}"
        )
    records = []
    for ln in lines[1:]:
        obj = json.loads(ln)
        records.append(SampleRecord(
            sample_id=obj["sample_id"],
            patient_id=obj["patient_id"],
            drr_path=obj["drr_path"],
            mask_path=obj["mask_path"],
            psi_deg=float(obj["psi_deg"]),
            fold=int(obj["fold"]),
        ))
    return Manifest(root=path.parent, task=header.get("task", ""), records=tuple(records))


def read_f32(path: str | Path) -> np.ndarray:
    """Raw float32 image with its JSON sidecar; returns (height, width)."""
    path = Path(path)
    sidecar = path.with_suffix(".json")
    meta = json.loads(sidecar.read_text(encoding="ascii"))
    w, h = int(meta["width"]), int(meta["height"])
    data = np.fromfile(path, dtype="<f4")
    if data.size != w * h:
        raise ValueError(f"{path}: expected {w * h} pixels, found {data.size}")
    return data.reshape(h, w)


def read_pgm(path: str | Path) -> np.ndarray:
    """Binary PGM mask; returns uint8 (height, width) with values 0/1."""
    blob = Path(path).read_bytes()
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
        tokens.append(blob[start:pos])
    pos += 1
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: expected binary PGM with maxval 255")
    w, h = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(blob[pos:], dtype=np.uint8)
    if pixels.size != w * h:
        raise ValueError(f"{path}: expected {w * h} pixels, found {pixels.size}")
    return (pixels.reshape(h, w) > 127).astype(np.uint8)


def write_pgm(mask: np.ndarray, path: str | Path) -> None:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError("mask must be 2D")
    h, w = mask.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + ((mask > 0).astype(np.uint8) * 255).tobytes())


def write_predictions_csv(rows: list[tuple[str, float]], path: str | Path) -> None:
    lines = ["sample_id,psi_pred_deg"]
    lines.extend(f"{sample_id},{float(value)!r}" for sample_id, value in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
