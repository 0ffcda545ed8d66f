import numpy as np
import pytest

from cereals.dataset import ImageRecord
from cereals.geometry import Polygon
from cereals.synthetic import DatasetSpec, generate_dataset


def make_record(image_id="img", height=8, width=8, classes=2, seed=0, polygons=None):
    """In-memory image with random features/labels and optional polygons."""
    rng = np.random.default_rng(seed)
    features = rng.normal(size=(height, width, 3)).astype(np.float32)
    labels = rng.integers(0, classes, size=(height, width)).astype(np.int16)
    return ImageRecord(
        image_id=image_id,
        features=features,
        gt_labels=labels,
        gt_polygons=polygons or [],
    )


def square_polygon(class_id, r0, c0, side):
    return Polygon(
        class_id=class_id,
        vertices=((r0, c0), (r0, c0 + side), (r0 + side, c0 + side), (r0 + side, c0)),
    )


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """16 train / 8 val images of 32x32, 4 classes; shared across tests."""
    spec = DatasetSpec(
        train_images=16,
        val_images=8,
        height=32,
        width=32,
        sites_min=4,
        sites_max=10,
        class_presence=[1.0, 1.0, 0.4, 0.4],
        seed=11,
    )
    root = tmp_path_factory.mktemp("tiny_dataset")
    return generate_dataset(spec, root)


@pytest.fixture(scope="session")
def micro_dataset(tmp_path_factory):
    """8 train / 4 val images of 16x16 for the fastest loop tests."""
    spec = DatasetSpec(
        train_images=8,
        val_images=4,
        height=16,
        width=16,
        sites_min=4,
        sites_max=6,
        class_presence=[1.0, 1.0, 0.5, 0.5],
        seed=5,
    )
    root = tmp_path_factory.mktemp("micro_dataset")
    return generate_dataset(spec, root)
