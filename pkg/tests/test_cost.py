import numpy as np
import pytest

from cereals.cost import (
    cost_training_targets,
    oracle_cost_map,
    predict_cost_map,
    rasterize_clicks,
)
from cereals.errors import DataError, StateError
from cereals.geometry import Polygon, Region
from cereals.pool import commit_regions, label_mask, seed_pool
from conftest import square_polygon


def test_triangle_contributes_three_clicks():
    poly = Polygon(0, ((1.2, 1.7), (5.9, 2.1), (3.3, 6.8)))
    clicks = rasterize_clicks([poly], 8, 8)
    assert clicks.sum() == 3.0
    assert clicks[1, 1] == 1.0 and clicks[5, 2] == 1.0 and clicks[3, 6] == 1.0


def test_twelve_vertices_on_distinct_pixels():
    verts = tuple((float(r), float(r)) for r in range(12))
    poly = Polygon(0, verts)
    clicks = rasterize_clicks([poly], 16, 16)
    assert clicks.sum() == 12.0
    assert (clicks == 1.0).sum() == 12


def test_clipping_at_ten():
    verts = tuple((2.0 + 0.01 * k, 3.0 + 0.01 * k) for k in range(11))
    poly = Polygon(0, verts)
    clicks = rasterize_clicks([poly], 8, 8)
    assert clicks[2, 3] == 10.0
    assert clicks.sum() == 10.0


def test_preclip_total_equals_vertex_count():
    rng = np.random.default_rng(0)
    polys = [
        Polygon(0, tuple((rng.uniform(0, 8), rng.uniform(0, 8)) for _ in range(5)))
        for _ in range(7)
    ]
    raw = rasterize_clicks(polys, 8, 8, clip=None)
    clipped = rasterize_clicks(polys, 8, 8)
    assert raw.sum() == 35
    assert clipped.sum() <= raw.sum()


def test_vertex_out_of_bounds_rejected():
    poly = Polygon(0, ((0, 0), (0, 9.5), (1, 1)))
    with pytest.raises(DataError):
        rasterize_clicks([poly], 8, 8)


class _OracleOnly:
    cost_trained = False


def test_oracle_mode_equals_click_map(tiny_dataset):
    image_id = tiny_dataset.train_ids[0]
    out = predict_cost_map(None, tiny_dataset, image_id, "oracle")
    record = tiny_dataset.image(image_id)
    assert np.array_equal(out, rasterize_clicks(record.gt_polygons, 32, 32))
    # idempotent / deterministic
    assert np.array_equal(out, predict_cost_map(None, tiny_dataset, image_id, "oracle"))


def test_estimated_mode_requires_trained_model(tiny_dataset):
    with pytest.raises(StateError):
        predict_cost_map(_OracleOnly(), tiny_dataset, tiny_dataset.train_ids[0], "builtin")
    with pytest.raises(StateError):
        predict_cost_map(None, tiny_dataset, tiny_dataset.train_ids[0], "external")


def test_unknown_mode_rejected(tiny_dataset):
    with pytest.raises(StateError):
        predict_cost_map(None, tiny_dataset, tiny_dataset.train_ids[0], "psychic")


def test_targets_after_seed_cover_full_images(tiny_dataset):
    pool = seed_pool(tiny_dataset, 3, rng_seed=1)
    targets = cost_training_targets(pool, tiny_dataset)
    assert len(targets) == 3
    for image_id, clicks, mask in targets:
        assert mask.all()
        assert np.array_equal(clicks, oracle_cost_map(tiny_dataset, image_id))


def test_targets_track_committed_regions(tiny_dataset):
    pool = seed_pool(tiny_dataset, 1, rng_seed=2)
    target_img = next(i for i in tiny_dataset.train_ids if i not in pool.labeled_regions)
    region = Region(target_img, 8, 8, 8)
    patch = tiny_dataset.image(target_img).gt_labels[8:16, 8:16]
    pool2 = commit_regions(pool, tiny_dataset, [(region, patch)])
    targets = {t[0]: t for t in cost_training_targets(pool2, tiny_dataset)}
    assert set(targets) == set(pool2.labeled_regions)
    _, clicks, mask = targets[target_img]
    assert mask.sum() == 64
    assert np.array_equal(mask, label_mask(pool2, tiny_dataset, target_img))
    # never any supervision outside the mask
    assert np.all(clicks[~mask] == 0.0)
    full = oracle_cost_map(tiny_dataset, target_img)
    assert np.array_equal(clicks[mask], full[mask])


def test_targets_function_of_pool_only(tiny_dataset):
    a = cost_training_targets(seed_pool(tiny_dataset, 2, rng_seed=3), tiny_dataset)
    b = cost_training_targets(seed_pool(tiny_dataset, 2, rng_seed=3), tiny_dataset)
    assert [t[0] for t in a] == [t[0] for t in b]
    for (_, ca, ma), (_, cb, mb) in zip(a, b):
        assert np.array_equal(ca, cb) and np.array_equal(ma, mb)


def test_empty_pool_rejected(tiny_dataset):
    from cereals.pool import PoolState

    empty = PoolState(labeled_regions={}, revealed_labels={}, round_index=0, rng_seed=0)
    with pytest.raises(StateError):
        cost_training_targets(empty, tiny_dataset)


def test_square_polygon_fixture_consistency():
    clicks = rasterize_clicks([square_polygon(1, 2, 2, 3)], 8, 8)
    assert clicks.sum() == 4.0
