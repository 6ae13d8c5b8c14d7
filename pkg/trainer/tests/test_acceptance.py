"""Acceptance: architecture census, overfit oracles, phantom-scale learning,
and the cross-validation handshake with the dataset toolkit.

The phantom-scale test builds 50 phantoms x 25 DRRs per preset through the
``pelvidrr`` CLI and trains both networks; expect roughly an hour on a small
CPU box. Run with ``-s`` to see one pass/fail line per criterion.
"""

import json
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
import torch

from drrtrain.data import DrrDataset
from drrtrain.io import read_manifest, read_pgm
from drrtrain.models import (
    build_regressor,
    build_unet,
    conv3x3_count,
    conv5x5_stride2_count,
    fc_widths,
    maxpool2x2_count,
    skip_count,
    upconv2x2_count,
)
from drrtrain.predict import cross_validate, predict
from drrtrain.train import TrainConfig, train

from conftest import run_primary


@contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name}")
        raise
    print(f"[PASS] {name}")


def test_architecture_census():
    with criterion("U-Net census 19/4/4/4; regressor 3x 5x5 stride-2, FC 100/250/1"):
        unet = build_unet()
        assert conv3x3_count(unet) == 19
        assert maxpool2x2_count(unet) == 4
        assert upconv2x2_count(unet) == 4
        assert skip_count(unet) == 4
        reg = build_regressor()
        assert conv5x5_stride2_count(reg) == 3
        assert fc_widths(reg) == (100, 250, 1)


def test_cross_validation_handshake(tiny_dataset, tmp_path):
    with criterion("cross_validate feeds eval psi; every sample predicted exactly once"):
        # reassigned folds live next to the images so relative paths resolve
        manifest_path = tiny_dataset / "manifest_k4.jsonl"
        run_primary("dataset", "folds", "--manifest", tiny_dataset / "manifest.jsonl",
                    "--k", 4, "--seed", 2, "--out", manifest_path)
        cfg = TrainConfig(
            task="regression", manifest=manifest_path, out_dir=tmp_path / "cv",
            epochs=1, batch_size=4, seed=0, input_size=64,
        )
        csv_path = cross_validate(cfg, k=4)
        manifest = read_manifest(manifest_path)
        ids = [line.split(",")[0] for line in Path(csv_path).read_text().splitlines()[1:]]
        assert sorted(ids) == sorted(r.sample_id for r in manifest.records)
        report_path = tmp_path / "report.json"
        run_primary("eval", "psi", "--pred-csv", csv_path,
                    "--manifest", manifest_path, "--out", report_path)
        payload = json.loads(report_path.read_text())["psi"]
        assert payload["overall"]["n_samples"] == len(manifest.records)
        assert len(payload["per_sample"]) == len(manifest.records)
        assert len({s["sample_id"] for s in payload["per_sample"]}) == len(manifest.records)
        assert np.isfinite(payload["overall"]["mean_abs_error_deg"])


@pytest.fixture(scope="session")
def phantom_scale_data(tmp_path_factory):
    """50 phantoms x 25 DRRs for each preset; folds k=5 (40 train / 10 test)."""
    root = tmp_path_factory.mktemp("phantom_scale")
    run_primary("phantom", "gen", "--count", 50, "--seed", 1234, "--out", root)
    for preset, seed in (("seg", 11), ("reg", 12)):
        out = root / preset
        run_primary("dataset", "gen", "--preset", preset, "--patients-dir", root,
                    "--n-per-patient", 25, "--seed", seed, "--out", out)
        run_primary("dataset", "folds", "--manifest", out / "manifest.jsonl",
                    "--k", 5, "--seed", 3)
    return root


@pytest.fixture(scope="session")
def single_sample_data(tmp_path_factory):
    """One phantom, one full-resolution DRR per preset, for the overfit oracles."""
    root = tmp_path_factory.mktemp("single_sample")
    run_primary("phantom", "gen", "--count", 1, "--seed", 321, "--out", root)
    for preset, seed in (("seg", 21), ("reg", 22)):
        run_primary("dataset", "gen", "--preset", preset, "--patients-dir", root,
                    "--n-per-patient", 1, "--seed", seed, "--out", root / preset)
    return root


def _dice(a: np.ndarray, b: np.ndarray) -> float:
    inter = int(((a > 0) & (b > 0)).sum())
    total = int((a > 0).sum() + (b > 0).sum())
    return 1.0 if total == 0 else 2.0 * inter / total


def test_overfit_oracle_segmentation(single_sample_data, tmp_path):
    with criterion("single-sample segmentation overfit: Dice > 0.95 after 200 steps"):
        manifest_path = single_sample_data / "seg" / "manifest.jsonl"
        manifest = read_manifest(manifest_path)
        assert len(manifest.records) == 1
        record = manifest.records[0]
        cfg = TrainConfig(
            task="segmentation", manifest=manifest_path, out_dir=tmp_path / "run",
            held_out_fold=None, epochs=200, batch_size=1, lr=5e-4, seed=0,
        )
        checkpoint = train(cfg)
        out = predict(checkpoint, manifest_path, None, tmp_path / "pred")
        predicted = read_pgm(Path(out) / f"{record.sample_id}.pgm")
        truth = read_pgm(manifest.root / record.mask_path)
        print(f"overfit Dice: {_dice(predicted, truth):.4f}")
        assert _dice(predicted, truth) > 0.95


def test_overfit_oracle_regression(single_sample_data, tmp_path):
    with criterion("single-sample regression overfit: |error| < 0.5 deg after 500 steps"):
        manifest_path = single_sample_data / "reg" / "manifest.jsonl"
        manifest = read_manifest(manifest_path)
        assert len(manifest.records) == 1
        record = manifest.records[0]
        cfg = TrainConfig(
            task="regression", manifest=manifest_path, out_dir=tmp_path / "run",
            held_out_fold=None, epochs=500, batch_size=1, seed=0,
        )
        checkpoint = train(cfg)
        csv_path = predict(checkpoint, manifest_path, None, tmp_path / "pred")
        value = float(Path(csv_path).read_text().splitlines()[1].split(",")[1])
        print(f"overfit |error|: {abs(value - record.psi_deg):.4f} deg")
        assert abs(value - record.psi_deg) < 0.5


def test_phantom_scale_segmentation(phantom_scale_data, tmp_path):
    with criterion("40/10 phantom split x 25 DRRs: held-out mean Dice >= 0.90"):
        manifest_path = phantom_scale_data / "seg" / "manifest.jsonl"
        cfg = TrainConfig(
            task="segmentation", manifest=manifest_path, out_dir=tmp_path / "run",
            held_out_fold=0, epochs=3, batch_size=4, lr=5e-4, seed=0,
        )
        checkpoint = train(cfg)
        pred_dir = predict(checkpoint, manifest_path, 0, tmp_path / "pred")
        report_path = tmp_path / "seg_report.json"
        out = run_primary("eval", "seg", "--pred-dir", pred_dir,
                          "--manifest", manifest_path, "--out", report_path)
        summary = json.loads(out.strip().splitlines()[-1])
        assert summary["n_images"] == 250
        print(f"held-out mean Dice: {summary['mean_dice']:.4f}")
        assert summary["mean_dice"] >= 0.90


def test_phantom_scale_regression(phantom_scale_data, tmp_path):
    with criterion("40/10 phantom split x 25 DRRs: held-out mean |PSI error| <= 4 deg"):
        manifest_path = phantom_scale_data / "reg" / "manifest.jsonl"
        cfg = TrainConfig(
            task="regression", manifest=manifest_path, out_dir=tmp_path / "run",
            held_out_fold=0, epochs=60, batch_size=16, seed=0, mask_source="gt",
        )
        checkpoint = train(cfg)
        csv_path = predict(checkpoint, manifest_path, 0, tmp_path / "pred")
        report_path = tmp_path / "psi_report.json"
        out = run_primary("eval", "psi", "--pred-csv", csv_path,
                          "--manifest", manifest_path, "--out", report_path)
        summary = json.loads(out.strip().splitlines()[-1])
        assert summary["n_samples"] == 250
        print(f"held-out mean |PSI error|: {summary['mean_abs_error_deg']:.2f} deg")
        assert summary["mean_abs_error_deg"] <= 4.0
