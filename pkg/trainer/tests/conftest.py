import json
import subprocess
import sys

import pytest

PRIMARY = [sys.executable, "-m", "pelvidrr.cli"]


def run_primary(*args) -> str:
    """Invoke the dataset toolkit CLI (the only coupling is its file formats)."""
    proc = subprocess.run(
        [*PRIMARY, *map(str, args)], capture_output=True, text=True, check=False
    )
    assert proc.returncode == 0, f"pelvidrr {' '.join(map(str, args))}\n{proc.stderr}"
    return proc.stdout


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """4 coarse phantoms x 3 regression DRRs at 32^2, folds k=2."""
    root = tmp_path_factory.mktemp("tiny_dataset")
    cam = root / "camera.json"
    cam.write_text(json.dumps({"detector_pixels": [32, 32], "detector_pixel_mm": [12.0, 12.0]}))
    run_primary(
        "phantom", "gen", "--count", 4, "--dims", 40, 40, 40,
        "--spacing", 5, 5, 5, "--seed", 2, "--out", root,
    )
    run_primary(
        "dataset", "gen", "--preset", "reg", "--patients-dir", root,
        "--n-per-patient", 3, "--camera-json", cam, "--seed", 9, "--out", root,
    )
    run_primary("dataset", "folds", "--manifest", root / "manifest.jsonl", "--k", 2, "--seed", 1)
    return root
