"""Torch datasets over manifest records, plus fold handling and leakage guard.

Inputs are per-image max-normalized and bilinearly resized to the network
input size. For regression the pelvis region is extracted by elementwise
multiplication of the DRR with its mask (ground-truth from the manifest, a
predicted mask directory, or no masking at all), re-normalized after
masking. Segmentation targets are resized with nearest-neighbor so they
stay binary.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.data import Dataset

from .io import Manifest, SampleRecord, read_f32, read_pgm

SEGMENTATION = "segmentation"
REGRESSION = "regression"
MASK_SOURCES = ("gt", "pred", "none")


class LeakageError(RuntimeError):
    """A patient appears on both sides of a train/test split."""


def split_by_fold(records, held_out_fold: int | None):
    """(train, test) record lists; ``None`` trains on everything."""
    records = list(records)
    if held_out_fold is None:
        return records, []
    folds = {r.fold for r in records}
    if -1 in folds:
        raise ValueError("manifest has unassigned folds; assign folds first")
    if held_out_fold not in folds:
        raise ValueError(f"fold {held_out_fold} not present (folds: {sorted(folds)})")
    train = [r for r in records if r.fold != held_out_fold]
    test = [r for r in records if r.fold == held_out_fold]
    return train, test


def assert_no_leakage(train_records, test_records) -> None:
    shared = {r.patient_id for r in train_records} & {r.patient_id for r in test_records}
    if shared:
        raise LeakageError(f"patients in both train and test: {sorted(shared)}")


def _normalize(img: torch.Tensor) -> torch.Tensor:
    peak = img.max()
    return img / peak if peak > 0 else img


def _resize(img: torch.Tensor, size: int, mode: str) -> torch.Tensor:
    if img.shape[-2:] == (size, size):
        return img
    kwargs = {} if mode == "nearest" else {"align_corners": False}
    return F.interpolate(img[None], size=(size, size), mode=mode, **kwargs)[0]


class DrrDataset(Dataset):
    """Yields (input, target, sample_id) triples for one task."""

    def __init__(
        self,
        manifest: Manifest,
        records,
        task: str,
        input_size: int = 256,
        mask_source: str = "gt",
        pred_mask_dir: str | Path | None = None,
    ):
        if task not in (SEGMENTATION, REGRESSION):
            raise ValueError(f"unknown task {task!r}")
        if mask_source not in MASK_SOURCES:
            raise ValueError(f"mask_source must be one of {MASK_SOURCES}")
        if mask_source == "pred" and pred_mask_dir is None:
            raise ValueError("mask_source 'pred' needs pred_mask_dir")
        self.manifest = manifest
        self.records = list(records)
        self.task = task
        self.input_size = input_size
        self.mask_source = mask_source
        self.pred_mask_dir = Path(pred_mask_dir) if pred_mask_dir else None

    def __len__(self) -> int:
        return len(self.records)

    def _input_mask(self, record: SampleRecord) -> np.ndarray:
        if self.mask_source == "gt":
            return read_pgm(self.manifest.root / record.mask_path)
        return read_pgm(self.pred_mask_dir / f"{record.sample_id}.pgm")

    def __getitem__(self, index: int):
        record = self.records[index]
        drr = torch.from_numpy(read_f32(self.manifest.root / record.drr_path).copy())[None]
        if self.task == REGRESSION:
            if self.mask_source != "none":
                mask = torch.from_numpy(self._input_mask(record).astype(np.float32))[None]
                drr = drr * mask
            x = _normalize(_resize(drr, self.input_size, "bilinear"))
            target = torch.tensor([record.psi_deg], dtype=torch.float32)
        else:
            x = _normalize(_resize(drr, self.input_size, "bilinear"))
            mask = torch.from_numpy(
                read_pgm(self.manifest.root / record.mask_path).astype(np.float32)
            )[None]
            target = _resize(mask, self.input_size, "nearest")
        return x, target, record.sample_id
