import numpy as np
import pytest
import torch

from drrtrain.data import (
    REGRESSION,
    SEGMENTATION,
    DrrDataset,
    LeakageError,
    assert_no_leakage,
    split_by_fold,
)
from drrtrain.io import (
    ManifestError,
    read_f32,
    read_manifest,
    read_pgm,
    write_pgm,
    write_predictions_csv,
)


def test_manifest_reader(tiny_dataset):
    manifest = read_manifest(tiny_dataset / "manifest.jsonl")
    assert manifest.task == "regression"
    assert len(manifest.records) == 12
    assert manifest.fold_ids() == {0, 1}
    ids = {r.sample_id for r in manifest.records}
    assert len(ids) == 12
    for record in manifest.records:
        assert (manifest.root / record.drr_path).is_file()
        assert (manifest.root / record.mask_path).is_file()
        assert np.isfinite(record.psi_deg)


def test_manifest_schema_guard(tmp_path):
    path = tmp_path / "manifest.jsonl"
    path.write_text('{"schema_version":99}\n')
    with pytest.raises(ManifestError):
        read_manifest(path)


def test_image_readers(tiny_dataset):
    manifest = read_manifest(tiny_dataset / "manifest.jsonl")
    record = manifest.records[0]
    drr = read_f32(manifest.root / record.drr_path)
    assert drr.shape == (32, 32)
    assert drr.dtype == np.float32
    assert np.isfinite(drr).all()
    mask = read_pgm(manifest.root / record.mask_path)
    assert mask.shape == (32, 32)
    assert set(np.unique(mask)) <= {0, 1}


def test_pgm_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    mask = rng.integers(0, 2, size=(9, 7), dtype=np.uint8)
    write_pgm(mask, tmp_path / "m.pgm")
    assert np.array_equal(read_pgm(tmp_path / "m.pgm"), mask)


def test_predictions_csv_format(tmp_path):
    write_predictions_csv([("a_s0", 1.25), ("b_s1", -3.5)], tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "sample_id,psi_pred_deg"
    assert lines[1] == "a_s0,1.25"
    assert lines[2] == "b_s1,-3.5"


def test_split_by_fold_and_leakage_guard(tiny_dataset):
    manifest = read_manifest(tiny_dataset / "manifest.jsonl")
    train, test = split_by_fold(manifest.records, 0)
    assert len(train) + len(test) == len(manifest.records)
    assert {r.fold for r in test} == {0}
    assert_no_leakage(train, test)  # clean split passes
    with pytest.raises(LeakageError):
        assert_no_leakage(train + [test[0]], test)
    with pytest.raises(ValueError):
        split_by_fold(manifest.records, 9)


def test_dataset_items(tiny_dataset):
    manifest = read_manifest(tiny_dataset / "manifest.jsonl")
    seg = DrrDataset(manifest, manifest.records, SEGMENTATION, input_size=64)
    x, target, sample_id = seg[0]
    assert x.shape == (1, 64, 64)
    assert target.shape == (1, 64, 64)
    assert float(x.max()) == 1.0  # per-image max normalization
    assert set(torch.unique(target).tolist()) <= {0.0, 1.0}
    assert sample_id == manifest.records[0].sample_id

    reg = DrrDataset(manifest, manifest.records, REGRESSION, input_size=64, mask_source="gt")
    x, target, _ = reg[0]
    assert x.shape == (1, 64, 64)
    assert target.shape == (1,)
    assert float(target[0]) == float(np.float32(manifest.records[0].psi_deg))
    # masked input: intensity outside the pelvis silhouette is zero
    raw = DrrDataset(manifest, manifest.records, REGRESSION, input_size=64, mask_source="none")
    x_raw, _, _ = raw[0]
    assert float((x_raw > 0).sum()) >= float((x > 0).sum())


def test_dataset_validation(tiny_dataset):
    manifest = read_manifest(tiny_dataset / "manifest.jsonl")
    with pytest.raises(ValueError):
        DrrDataset(manifest, manifest.records, "classification")
    with pytest.raises(ValueError):
        DrrDataset(manifest, manifest.records, REGRESSION, mask_source="wrong")
    with pytest.raises(ValueError):
        DrrDataset(manifest, manifest.records, REGRESSION, mask_source="pred")
