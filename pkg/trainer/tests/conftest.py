import json
import subprocess
import sys
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parents[2]
GOLDEN_DIR = REPO_ROOT / "tests" / "golden"

TOMODIFF = (sys.executable, "-m", "tomodiff")


def run_toolkit(*args):
    proc = subprocess.run([*TOMODIFF, *map(str, args)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory) -> Path:
    """Eight simulator samples at 32x32x8 plus a manifest, built via the CLI."""
    base = tmp_path_factory.mktemp("dataset")
    records = []
    geometries = [(8.0, 2.0), (10.0, 1.0), (6.0, 1.5), (12.0, 3.0)]
    for i in range(8):
        rng_deg, step_deg = geometries[i % len(geometries)]
        vol = f"vol_{i:04d}.tdvol"
        tilt = f"tilt_{i:04d}.tdtlt"
        run_toolkit("phantom", "--dims", "32x32x8", "--seed", i, "-o", base / vol)
        run_toolkit(
            "simulate", "-i", base / vol, "--range", rng_deg, "--step", step_deg,
            "--seed", i, "-o", base / tilt,
        )
        records.append(
            {
                "id": i,
                "volume": vol,
                "tilts": tilt,
                "range_deg": rng_deg,
                "step_deg": step_deg,
                "center_deg": 0.0,
                "c": 0.02,
                "gamma": 0.8,
                "k": 1.0,
                "noise_sigma": 0.0,
                "seed": i,
            }
        )
    manifest = base / "manifest.jsonl"
    with manifest.open("w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    return base


@pytest.fixture(scope="session")
def trained_checkpoint(dataset_dir, tmp_path_factory) -> Path:
    from tomotrainer import TrainConfig, train

    ckpt = tmp_path_factory.mktemp("ckpt") / "toy.pt"
    train(TrainConfig(manifest=dataset_dir / "manifest.jsonl", checkpoint=ckpt, seed=1))
    return ckpt
