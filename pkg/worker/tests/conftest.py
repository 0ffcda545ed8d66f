import shutil
import subprocess

import numpy as np
import pytest

CEREALS = shutil.which("cereals")


@pytest.fixture(scope="session")
def primary_cli():
    if CEREALS is None:
        pytest.skip("primary 'cereals' CLI not installed")
    return CEREALS


@pytest.fixture(scope="session")
def small_dataset(primary_cli, tmp_path_factory):
    """Small dataset generated through the primary CLI (external interface)."""
    out = tmp_path_factory.mktemp("ds") / "dataset"
    subprocess.run(
        [
            primary_cli,
            "generate",
            "--out",
            str(out),
            "--images",
            "24",
            "--val-images",
            "8",
            "--size",
            "64",
            "--seed",
            "6",
        ],
        check=True,
        capture_output=True,
    )
    return out


def random_scene(rng, h=20, w=20, channels=4, classes=3):
    """Synthetic supervised scene for direct model tests."""
    labels = rng.integers(0, classes, size=(h, w)).astype(np.float32)
    means = np.zeros((classes, channels - 1))
    for c in range(classes):
        means[c, c % (channels - 1)] = 2.0
    base = means[labels.astype(int)] + rng.normal(0, 0.3, size=(h, w, channels - 1))
    features = np.concatenate([base, base[:, :, :1]], axis=2).astype(np.float32)
    return features, labels
