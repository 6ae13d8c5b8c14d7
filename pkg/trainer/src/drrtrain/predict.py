"""Prediction and cross-validation, emitting the interchange formats.

Segmentation predictions are 0.5-thresholded PGMs named by sample id at the
DRR's native resolution; regression predictions are a
``sample_id,psi_pred_deg`` CSV. ``cross_validate`` trains one model per fold
and concatenates its held-out predictions so every sample is covered exactly
once, ready for the dataset toolkit's ``eval`` subcommands.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import torch
import torch.nn.functional as F

from .data import REGRESSION, SEGMENTATION, DrrDataset, assert_no_leakage, split_by_fold
from .io import read_manifest, write_pgm, write_predictions_csv
from .models import build_regressor, build_unet
from .train import TrainConfig, train


def load_checkpoint(path: str | Path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    task = payload["task"]
    if task == SEGMENTATION:
        model = build_unet(base_channels=payload["base_channels"])
    elif task == REGRESSION:
        model = build_regressor(input_size=payload["input_size"])
    else:
        raise ValueError(f"checkpoint has unknown task {task!r}")
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload


def predict(
    checkpoint: str | Path,
    manifest_path: str | Path,
    fold: int | None,
    out_dir: str | Path,
    batch_size: int = 4,
) -> Path:
    """Predict the held-out ``fold`` (or all records when ``None``).

    Returns the predictions CSV path for regression, the output directory
    for segmentation.
    """
    model, payload = load_checkpoint(checkpoint)
    task = payload["task"]
    manifest = read_manifest(manifest_path)
    if fold is None:
        records = list(manifest.records)
    else:
        _, records = split_by_fold(manifest.records, fold)
    if not records:
        raise ValueError(f"no records in fold {fold!r}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = DrrDataset(
        manifest, records, task,
        input_size=payload["input_size"],
        mask_source=payload["mask_source"] if task == REGRESSION else "gt",
    )
    rows: list[tuple[str, float]] = []
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            batch = [dataset[i] for i in range(start, min(start + batch_size, len(dataset)))]
            x = torch.stack([item[0] for item in batch])
            output = model(x)
            for (xin, _, sample_id), out in zip(batch, output):
                if task == SEGMENTATION:
                    record = next(r for r in records if r.sample_id == sample_id)
                    native = _native_dims(manifest.root / record.drr_path)
                    logits = out  # (1, H, W)
                    if logits.shape[-2:] != native:
                        logits = F.interpolate(
                            logits[None], size=native, mode="bilinear", align_corners=False
                        )[0]
                    mask = (torch.sigmoid(logits[0]) >= 0.5).numpy().astype("uint8")
                    write_pgm(mask, out_dir / f"{sample_id}.pgm")
                else:
                    rows.append((sample_id, float(out.item())))
    if task == REGRESSION:
        csv_path = out_dir / "predictions.csv"
        write_predictions_csv(rows, csv_path)
        return csv_path
    return out_dir


def _native_dims(drr_path: Path) -> tuple[int, int]:
    meta = json.loads(drr_path.with_suffix(".json").read_text(encoding="ascii"))
    return (int(meta["height"]), int(meta["width"]))


def cross_validate(cfg: TrainConfig, k: int = 4) -> Path:
    """Train k fold models; aggregate their held-out predictions.

    Every sample is predicted exactly once. Returns the aggregated
    ``predictions.csv`` for regression or the aggregated prediction
    directory for segmentation.
    """
    manifest = read_manifest(cfg.manifest)
    folds = manifest.fold_ids()
    missing = set(range(k)) - folds
    if missing:
        raise ValueError(f"manifest lacks folds {sorted(missing)}; assign k={k} folds first")

    out_root = Path(cfg.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    agg_dir = out_root / "predictions"
    agg_dir.mkdir(exist_ok=True)
    rows: list[tuple[str, float]] = []
    seen: set[str] = set()
    for fold in range(k):
        train_records, test_records = split_by_fold(manifest.records, fold)
        assert_no_leakage(train_records, test_records)
        fold_cfg = replace(cfg, held_out_fold=fold, out_dir=out_root / f"fold_{fold}")
        checkpoint = train(fold_cfg)
        result = predict(checkpoint, cfg.manifest, fold, out_root / f"fold_{fold}")
        for record in test_records:
            if record.sample_id in seen:
                raise RuntimeError(f"sample {record.sample_id!r} predicted twice")
            seen.add(record.sample_id)
        if cfg.task == REGRESSION:
            text = Path(result).read_text(encoding="ascii").splitlines()[1:]
            for line in text:
                sample_id, value = line.split(",")
                rows.append((sample_id, float(value)))
        else:
            for pgm in sorted(Path(result).glob("*.pgm")):
                (agg_dir / pgm.name).write_bytes(pgm.read_bytes())
    not_covered = {r.sample_id for r in manifest.records} - seen
    if not_covered:
        raise RuntimeError(f"samples never predicted: {sorted(not_covered)[:5]}...")
    if cfg.task == REGRESSION:
        csv_path = out_root / "predictions.csv"
        write_predictions_csv(rows, csv_path)
        return csv_path
    return agg_dir
