"""Training loops for the segmenter and the PSI regressor.

Each run trains on every fold except the held-out one (a leakage guard
aborts if a patient would appear on both sides), logs one
``epoch,loss,metric`` row per epoch to ``train_log.csv``, and saves a
checkpoint holding the weights plus whatever is needed to rebuild the model
for prediction. Seeded and single-process, so runs repeat exactly on the
same machine (standard framework caveats apply across versions/platforms).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import nn
from torch.utils.data import DataLoader

from .data import (
    REGRESSION,
    SEGMENTATION,
    DrrDataset,
    assert_no_leakage,
    split_by_fold,
)
from .io import Manifest, read_manifest
from .models import build_regressor, build_unet


@dataclass
class TrainConfig:
    task: str
    manifest: Path
    out_dir: Path
    held_out_fold: int | None = None  # None: train on every record
    epochs: int = 2
    batch_size: int = 4
    lr: float | None = None  # None: 1e-3 for segmentation, 1e-4 for regression
    seed: int = 0
    mask_source: str = "gt"  # regression input masking: gt | pred | none
    pred_mask_dir: Path | None = None
    base_channels: int = 32
    input_size: int = 256
    sample_ids: tuple[str, ...] = field(default_factory=tuple)  # restrict training set

    def resolved_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return 1e-3 if self.task == SEGMENTATION else 1e-4


def _dice_from_logits(logits: torch.Tensor, target: torch.Tensor) -> float:
    pred = (torch.sigmoid(logits) >= 0.5).float()
    inter = (pred * target).sum().item()
    total = pred.sum().item() + target.sum().item()
    return 1.0 if total == 0 else 2.0 * inter / total


def _train_records(cfg: TrainConfig, manifest: Manifest):
    train, test = split_by_fold(manifest.records, cfg.held_out_fold)
    assert_no_leakage(train, test)
    if cfg.sample_ids:
        wanted = set(cfg.sample_ids)
        train = [r for r in train if r.sample_id in wanted]
        missing = wanted - {r.sample_id for r in train}
        if missing:
            raise ValueError(f"sample_ids not in the training folds: {sorted(missing)}")
    if not train:
        raise ValueError("no training records selected")
    return train


def train(cfg: TrainConfig) -> Path:
    """Run one training and return the checkpoint path."""
    if cfg.task not in (SEGMENTATION, REGRESSION):
        raise ValueError(f"unknown task {cfg.task!r}")
    manifest = read_manifest(cfg.manifest)
    records = _train_records(cfg, manifest)

    torch.manual_seed(cfg.seed)
    dataset = DrrDataset(
        manifest, records, cfg.task,
        input_size=cfg.input_size,
        mask_source=cfg.mask_source if cfg.task == REGRESSION else "gt",
        pred_mask_dir=cfg.pred_mask_dir,
    )
    loader = DataLoader(
        dataset,
        batch_size=cfg.batch_size,
        shuffle=True,
        generator=torch.Generator().manual_seed(cfg.seed),
        num_workers=0,
    )

    if cfg.task == SEGMENTATION:
        model = build_unet(base_channels=cfg.base_channels)
        loss_fn = nn.BCEWithLogitsLoss()
    else:
        model = build_regressor(input_size=cfg.input_size)
        loss_fn = nn.MSELoss()
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.resolved_lr())

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_rows = ["epoch,loss,metric"]
    model.train()
    for epoch in range(cfg.epochs):
        loss_total = 0.0
        metric_total = 0.0
        batches = 0
        for x, target, _ in loader:
            optimizer.zero_grad()
            output = model(x)
            loss = loss_fn(output, target)
            loss.backward()
            optimizer.step()
            loss_total += loss.item()
            if cfg.task == SEGMENTATION:
                metric_total += _dice_from_logits(output.detach(), target)
            else:
                metric_total += (output.detach() - target).abs().mean().item()
            batches += 1
        log_rows.append(f"{epoch},{loss_total / batches!r},{metric_total / batches!r}")
    (out_dir / "train_log.csv").write_text("\n".join(log_rows) + "\n", encoding="ascii")

    checkpoint = out_dir / "checkpoint.pt"
    torch.save(
        {
            "task": cfg.task,
            "state_dict": model.state_dict(),
            "base_channels": cfg.base_channels,
            "input_size": cfg.input_size,
            "mask_source": cfg.mask_source,
            "seed": cfg.seed,
        },
        checkpoint,
    )
    return checkpoint


def train_segmentation(cfg: TrainConfig) -> Path:
    if cfg.task != SEGMENTATION:
        raise ValueError("config task must be segmentation")
    return train(cfg)


def train_regressor(cfg: TrainConfig) -> Path:
    if cfg.task != REGRESSION:
        raise ValueError("config task must be regression")
    return train(cfg)
