"""Dataset generation, JSONL manifests, and patient-level fold assignment.

A dataset lives in one root directory::

    root/
      volumes/   per-patient CT-like volume, bone mask, landmark JSON
      images/    rendered DRRs (.f32 + .json sidecar)
      masks/     projected pelvis masks (.pgm)
      manifest.jsonl

The manifest is JSON Lines: one header object (schema version, task, pose
bounds, camera, global seed) followed by one object per sample. Record paths
are relative to the root. Every sample's pose comes from its own
counter-based random stream keyed by (global seed, patient id, sample
index), so regeneration is byte-identical regardless of execution order.

Two presets mirror the two training recipes: ``seg`` samples rotations
uniformly within +/-15 degrees on all three axes, ``reg`` within +/-15
degrees anteroposterior (about +x) and +/-5 degrees on the two other axes;
both translate within +/-20 mm per axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import geometry
from .geometry import LandmarkSet, RigidTransform, TransformBounds
from .projector import CameraModel, RenderSettings, project_mask, render_drr
from .volume_io import Volume3, read_landmarks, read_volume, write_image, write_landmarks, write_volume

SCHEMA_VERSION = 1

SEG_BOUNDS = TransformBounds(rot_x_deg=15.0, rot_y_deg=15.0, rot_z_deg=15.0, trans_mm=20.0)
REG_BOUNDS = TransformBounds(rot_x_deg=15.0, rot_y_deg=5.0, rot_z_deg=5.0, trans_mm=20.0)
PRESETS = {"seg": ("segmentation", SEG_BOUNDS), "reg": ("regression", REG_BOUNDS)}


class ManifestError(ValueError):
    """Malformed manifest file or inconsistent manifest contents."""


class GenerationError(RuntimeError):
    """Rendering or I/O failed for one sample; names the (patient, index)."""


@dataclass
class Patient:
    patient_id: str
    volume: Volume3
    mask: Volume3
    landmarks: LandmarkSet


@dataclass
class SampleRecord:
    sample_id: str
    patient_id: str
    drr_path: str
    mask_path: str
    psi_deg: float
    euler_deg: tuple[float, float, float]
    translation_mm: tuple[float, float, float]
    fold: int = -1  # -1 until assign_folds runs


@dataclass
class DatasetManifest:
    task: str
    bounds: TransformBounds
    camera: CameraModel
    global_seed: int
    records: list[SampleRecord] = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def patient_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.records:
            seen.setdefault(r.patient_id, None)
        return sorted(seen)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _header_dict(m: DatasetManifest) -> dict:
    return {
        "schema_version": m.schema_version,
        "task": m.task,
        "bounds": {
            "rot_x_deg": m.bounds.rot_x_deg,
            "rot_y_deg": m.bounds.rot_y_deg,
            "rot_z_deg": m.bounds.rot_z_deg,
            "trans_mm": m.bounds.trans_mm,
        },
        "camera": {
            "source_to_detector_mm": m.camera.source_to_detector_mm,
            "source_to_isocenter_mm": m.camera.source_to_isocenter_mm,
            "detector_pixels": list(m.camera.detector_pixels),
            "detector_pixel_mm": list(m.camera.detector_pixel_mm),
        },
        "global_seed": m.global_seed,
    }


def _record_dict(r: SampleRecord) -> dict:
    return {
        "sample_id": r.sample_id,
        "patient_id": r.patient_id,
        "drr_path": r.drr_path,
        "mask_path": r.mask_path,
        "psi_deg": r.psi_deg,
        "transform": {
            "euler_deg": list(r.euler_deg),
            "translation_mm": list(r.translation_mm),
        },
        "fold": r.fold,
    }


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    lines = [_dumps(_header_dict(manifest))]
    lines.extend(_dumps(_record_dict(r)) for r in manifest.records)
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    lines = [ln for ln in path.read_text(encoding="ascii").splitlines() if ln.strip()]
    if not lines:
        raise ManifestError(f"{path}: empty manifest")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: invalid header JSON: {e}") from e
    if header.get("schema_version") != SCHEMA_VERSION:
        raise ManifestError(
            f"{path}: schema_version {header.get('schema_version')!r} != {SCHEMA_VERSION}"
        )
    try:
        bounds = TransformBounds(**header["bounds"])
        cam = header["camera"]
        camera = CameraModel(
            source_to_detector_mm=cam["source_to_detector_mm"],
            source_to_isocenter_mm=cam["source_to_isocenter_mm"],
            detector_pixels=tuple(cam["detector_pixels"]),
            detector_pixel_mm=tuple(cam["detector_pixel_mm"]),
        )
        records = []
        seen_ids: set[str] = set()
        for ln in lines[1:]:
            obj = json.loads(ln)
            rec = SampleRecord(
                sample_id=obj["sample_id"],
                patient_id=obj["patient_id"],
                drr_path=obj["drr_path"],
                mask_path=obj["mask_path"],
                psi_deg=float(obj["psi_deg"]),
                euler_deg=tuple(float(v) for v in obj["transform"]["euler_deg"]),
                translation_mm=tuple(float(v) for v in obj["transform"]["translation_mm"]),
                fold=int(obj["fold"]),
            )
            if rec.sample_id in seen_ids:
                raise ManifestError(f"{path}: duplicate sample_id {rec.sample_id!r}")
            seen_ids.add(rec.sample_id)
            records.append(rec)
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
        if isinstance(e, ManifestError):
            raise
        raise ManifestError(f"{path}: malformed manifest: {e}") from e
    return DatasetManifest(
        task=header.get("task", ""),
        bounds=bounds,
        camera=camera,
        global_seed=int(header["global_seed"]),
        records=records,
    )


def gen_dataset(
    patients: list[Patient],
    n_per_patient: int,
    bounds: TransformBounds,
    cam: CameraModel,
    settings: RenderSettings,
    global_seed: int,
    out_dir: str | Path,
    task: str = "segmentation",
) -> DatasetManifest:
    """Render ``n_per_patient`` posed (DRR, mask) pairs per patient.

    Writes images under ``out_dir`` and the manifest to
    ``out_dir/manifest.jsonl``. Deterministic in (patients, parameters,
    global_seed); see module docstring for the per-sample seeding scheme.
    """
    if n_per_patient < 1:
        raise ValueError(f"n_per_patient must be >= 1, got {n_per_patient}")
    ids = [p.patient_id for p in patients]
    if len(set(ids)) != len(ids):
        raise ValueError("patient ids must be unique")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    manifest = DatasetManifest(task=task, bounds=bounds, camera=cam, global_seed=int(global_seed))
    for patient in patients:
        pivot = patient.volume.center
        for index in range(n_per_patient):
            try:
                rng = geometry.seeded_stream(global_seed, patient.patient_id, index)
                t = geometry.sample_transform(rng, bounds).with_pivot(pivot)
                drr = render_drr(patient.volume, t, cam, settings)
                mask_img = project_mask(patient.mask, t, cam, settings)
                sample_id = f"{patient.patient_id}_s{index:04d}"
                drr_rel = f"images/{sample_id}.f32"
                mask_rel = f"masks/{sample_id}.pgm"
                write_image(drr, out_dir / drr_rel)
                write_image(mask_img, out_dir / mask_rel)
                psi = geometry.psi_of_posed_patient(patient.landmarks, t)
            except Exception as e:
                raise GenerationError(
                    f"patient {patient.patient_id!r} sample {index}: {e}"
                ) from e
            manifest.records.append(SampleRecord(
                sample_id=sample_id,
                patient_id=patient.patient_id,
                drr_path=drr_rel,
                mask_path=mask_rel,
                psi_deg=psi,
                euler_deg=t.euler_deg,
                translation_mm=t.translation_mm,
            ))
    write_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest


def assign_folds(manifest: DatasetManifest, k: int, seed: int = 0) -> DatasetManifest:
    """Deal patients into ``k`` folds (shuffled round-robin, patient-level).

    Every record inherits its patient's fold; fold patient-counts differ by
    at most one. Returns a new manifest, input unchanged.
    """
    pids = manifest.patient_ids()
    if k < 2:
        raise ValueError(f"fold count must be >= 2, got {k}")
    if k > len(pids):
        raise ValueError(f"fold count {k} exceeds patient count {len(pids)}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    order = rng.permutation(len(pids))
    fold_of = {pids[j]: pos % k for pos, j in enumerate(order)}
    records = [replace(r, fold=fold_of[r.patient_id]) for r in manifest.records]
    return replace(manifest, records=records)


def split(manifest: DatasetManifest, held_out_fold: int):
    """Partition records into (train, test) by the held-out fold index."""
    folds = {r.fold for r in manifest.records}
    if -1 in folds:
        raise ValueError("manifest has unassigned folds; run assign_folds first")
    if held_out_fold not in folds:
        raise ValueError(f"fold {held_out_fold} not present (folds: {sorted(folds)})")
    train = [r for r in manifest.records if r.fold != held_out_fold]
    test = [r for r in manifest.records if r.fold == held_out_fold]
    return train, test


# ---------------------------------------------------------------------------
# Patient directory layout (root/volumes)


def write_patient(root: str | Path, patient: Patient) -> None:
    vol_dir = Path(root) / "volumes"
    vol_dir.mkdir(parents=True, exist_ok=True)
    write_volume(patient.volume, vol_dir / f"{patient.patient_id}.mhd")
    write_volume(patient.mask, vol_dir / f"{patient.patient_id}_mask.mhd")
    write_landmarks(patient.landmarks, vol_dir / f"{patient.patient_id}_landmarks.json")


def load_patients(patients_dir: str | Path) -> list[Patient]:
    """Load every patient under ``patients_dir`` (or its volumes/ subdir)."""
    base = Path(patients_dir)
    if (base / "volumes").is_dir():
        base = base / "volumes"
    if not base.is_dir():
        raise FileNotFoundError(f"patient directory not found: {patients_dir}")
    patients = []
    for lm_path in sorted(base.glob("*_landmarks.json")):
        pid = lm_path.name[: -len("_landmarks.json")]
        patients.append(Patient(
            patient_id=pid,
            volume=read_volume(base / f"{pid}.mhd"),
            mask=read_volume(base / f"{pid}_mask.mhd"),
            landmarks=read_landmarks(lm_path),
        ))
    if not patients:
        raise FileNotFoundError(f"no patients (*_landmarks.json) under {base}")
    return patients


def recomputed_psi(record: SampleRecord, landmarks: LandmarkSet) -> float:
    """PSI recomputed from a record's stored transform and the landmarks."""
    t = RigidTransform(euler_deg=record.euler_deg, translation_mm=record.translation_mm)
    return geometry.psi_of_posed_patient(landmarks, t)
