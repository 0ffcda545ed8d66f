import numpy as np
import pytest

from cereals_worker.model import UNLABELED, WorkerModel, miou, stable_seed
from conftest import random_scene


def make_items(rng, count=2, labeled=True):
    items = []
    for i in range(count):
        features, labels = random_scene(rng)
        mask = np.ones_like(labels) if labeled else np.zeros_like(labels)
        items.append(
            {
                "image_id": f"img_{i}",
                "features": features,
                "labels": labels[:, :, None],
                "mask": mask[:, :, None],
            }
        )
    return items


def val_items(rng, count=1):
    out = []
    for i in range(count):
        features, labels = random_scene(rng)
        out.append({"image_id": f"val_{i}", "features": features, "labels": labels[:, :, None]})
    return out


def train_model(seed=5):
    rng = np.random.default_rng(0)
    model = WorkerModel()
    outcome = model.train_seg(
        make_items(rng), val_items(rng), classes=3, seed=seed, patience=10, max_epochs=40, dropout=0.25
    )
    return model, outcome


def test_training_learns_the_scene():
    model, outcome = train_model()
    rng = np.random.default_rng(42)
    features, labels = random_scene(rng)
    pred = np.argmax(model.seg_probs(features), axis=2)
    assert miou(pred, labels.astype(int), 3) > 0.7
    assert outcome.epochs_run >= 1


def test_training_deterministic():
    a, _ = train_model(seed=5)
    b, _ = train_model(seed=5)
    assert np.array_equal(a.seg_weights, b.seg_weights)
    c, _ = train_model(seed=6)
    assert not np.array_equal(a.seg_weights, c.seg_weights)


def test_masked_pixels_ignored():
    rng = np.random.default_rng(1)
    items = make_items(rng)
    vals = val_items(rng)
    model_a = WorkerModel()
    model_a.train_seg(items, vals, classes=3, seed=2, patience=10, max_epochs=30, dropout=0.0)

    # mask out half of each image and corrupt the hidden labels
    corrupted = []
    for item in items:
        labels = item["labels"].copy()
        mask = item["mask"].copy()
        mask[10:, :, :] = 0.0
        labels[10:, :, :] = UNLABELED
        corrupted.append({**item, "labels": labels, "mask": mask})
    model_b = WorkerModel()
    model_b.train_seg(corrupted, vals, classes=3, seed=2, patience=10, max_epochs=30, dropout=0.0)

    garbled = []
    for item in corrupted:
        labels = item["labels"].copy()
        labels[10:, :, :] = 1.0  # junk under the mask
        garbled.append({**item, "labels": labels})
    model_c = WorkerModel()
    model_c.train_seg(garbled, vals, classes=3, seed=2, patience=10, max_epochs=30, dropout=0.0)

    assert np.array_equal(model_b.seg_weights, model_c.seg_weights)
    assert not np.array_equal(model_a.seg_weights, model_b.seg_weights)


def test_probabilities_are_valid():
    model, _ = train_model()
    rng = np.random.default_rng(3)
    features, _ = random_scene(rng)
    probs = model.seg_probs(features)
    assert probs.shape == (20, 20, 3)
    assert np.allclose(probs.sum(axis=2), 1.0, atol=1e-6)
    assert np.all(probs >= 0)


def test_committee_members_reproducible_and_distinct():
    model, _ = train_model()
    rng = np.random.default_rng(4)
    features, _ = random_scene(rng)
    a = model.committee_member(features, "img_x", 0)
    b = model.committee_member(features, "img_x", 0)
    assert np.array_equal(a, b)
    c = model.committee_member(features, "img_x", 1)
    assert not np.array_equal(a, c)


def test_zero_dropout_members_identical():
    rng = np.random.default_rng(5)
    model = WorkerModel()
    model.train_seg(
        make_items(rng), val_items(rng), classes=3, seed=1, patience=5, max_epochs=20, dropout=0.0
    )
    features, _ = random_scene(rng)
    assert np.array_equal(
        model.committee_member(features, "i", 0), model.committee_member(features, "i", 1)
    )


def test_cost_head_requires_backbone_and_learns_zeros():
    model = WorkerModel()
    with pytest.raises(RuntimeError):
        model.cost_map(np.zeros((4, 4, 3), dtype=np.float32))
    model, _ = train_model()
    rng = np.random.default_rng(6)
    items = []
    for i in range(2):
        features, _ = random_scene(rng)
        items.append(
            {
                "image_id": f"c{i}",
                "features": features,
                "clicks": np.zeros((20, 20, 1), dtype=np.float32),
                "mask": np.ones((20, 20, 1), dtype=np.float32),
            }
        )
    model.train_cost(items, seed=7, patience=10, max_epochs=40)
    features, _ = random_scene(rng)
    cost = model.cost_map(features)
    assert cost.shape == (20, 20)
    assert np.all(cost >= 0)
    assert cost.mean() < 0.05


def test_retraining_backbone_invalidates_cost_head():
    model, _ = train_model()
    rng = np.random.default_rng(8)
    features, _ = random_scene(rng)
    items = [
        {
            "image_id": "c0",
            "features": features,
            "clicks": np.zeros((20, 20, 1), dtype=np.float32),
            "mask": np.ones((20, 20, 1), dtype=np.float32),
        }
    ]
    model.train_cost(items, seed=1, patience=5, max_epochs=10)
    model.train_seg(
        make_items(np.random.default_rng(9)),
        val_items(np.random.default_rng(10)),
        classes=3,
        seed=11,
        patience=5,
        max_epochs=10,
        dropout=0.0,
    )
    with pytest.raises(RuntimeError):
        model.cost_map(features)


def test_miou_reference_values():
    gt = np.array([[0, 0], [1, 1]])
    pred = np.array([[0, 1], [1, 1]])
    assert miou(pred, gt, 2) == pytest.approx(7 / 12)
    assert miou(gt, gt, 3) == 1.0


def test_stable_seed_mixes_parts():
    assert stable_seed(1, "a", 2) == stable_seed(1, "a", 2)
    assert stable_seed(1, "a", 2) != stable_seed(1, "b", 2)
