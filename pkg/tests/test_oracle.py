import numpy as np
import pytest

from cereals.errors import InvariantError
from cereals.geometry import Polygon, Region
from cereals.oracle import annotate, count_border_clicks, count_interior_clicks, region_cost_gt
from cereals.pool import seed_pool
from conftest import make_record


def record_with_polygons(polygons, height=8, width=8):
    record = make_record(height=height, width=width, seed=1)
    record.gt_polygons = polygons
    return record


def test_full_image_region_counts_all_vertices_no_border(tiny_dataset):
    image_id = tiny_dataset.train_ids[0]
    record = tiny_dataset.image(image_id)
    receipt = annotate(Region(image_id, 0, 0, 32), record)
    assert receipt.clicks_border == 0
    assert receipt.clicks_interior == record.vertex_count
    assert np.array_equal(receipt.labels, record.gt_labels)


def test_region_strictly_inside_polygon_costs_zero():
    poly = Polygon(0, ((0, 0), (0, 8), (8, 8), (8, 0)))
    record = record_with_polygons([poly])
    receipt = annotate(Region("img", 2, 2, 3), record)
    assert receipt.clicks_interior == 0
    assert receipt.clicks_border == 0
    assert receipt.clicks_total == 0


def test_border_clicks_from_hand_built_polygon():
    # Chain crosses the left border of region [2,6]x[2,6] twice.
    poly = Polygon(0, ((3, 0), (3, 4), (5, 4), (5, 0)))
    record = record_with_polygons([poly])
    region = Region("img", 2, 2, 4)
    assert count_border_clicks(record, region) == 2
    assert count_interior_clicks(record, region) == 2  # vertices (3,4), (5,4)
    assert region_cost_gt(region, record) == 4


def test_interior_clicks_match_clickmap_sum(tiny_dataset):
    from cereals.cost import rasterize_clicks

    image_id = tiny_dataset.train_ids[1]
    record = tiny_dataset.image(image_id)
    raw = rasterize_clicks(record.gt_polygons, 32, 32, clip=None)
    rng = np.random.default_rng(3)
    for _ in range(10):
        r, c = (int(x) for x in rng.integers(0, 25, size=2))
        region = Region(image_id, r, c, 8)
        rs, cs = region.slices()
        assert count_interior_clicks(record, region) == raw[rs, cs].sum()


def test_overlap_with_pool_rejected(tiny_dataset):
    pool = seed_pool(tiny_dataset, 1, rng_seed=1)
    seeded = next(iter(pool.labeled_regions))
    with pytest.raises(InvariantError):
        annotate(Region(seeded, 0, 0, 8), tiny_dataset.image(seeded), pool)


def partition_regions(image_id, image_size, window):
    return [
        Region(image_id, r, c, window)
        for r in range(0, image_size, window)
        for c in range(0, image_size, window)
    ]


def test_superadditivity_with_equality_for_whole_image(tiny_dataset):
    for image_id in tiny_dataset.train_ids[:4]:
        record = tiny_dataset.image(image_id)
        whole = region_cost_gt(Region(image_id, 0, 0, 32), record)
        assert whole == record.vertex_count
        for window in (8, 16):
            parts = partition_regions(image_id, 32, window)
            interior = sum(count_interior_clicks(record, p) for p in parts)
            border = sum(count_border_clicks(record, p) for p in parts)
            assert interior == record.vertex_count  # vertices partition exactly
            total = sum(region_cost_gt(p, record) for p in parts)
            assert total == interior + border
            assert total >= whole
            if border == 0:
                assert total == whole


def test_annotate_deterministic_and_side_effect_free(tiny_dataset):
    image_id = tiny_dataset.train_ids[2]
    record = tiny_dataset.image(image_id)
    before = record.gt_labels.copy()
    region = Region(image_id, 4, 4, 8)
    a = annotate(region, record)
    b = annotate(region, record)
    assert a.clicks_interior == b.clicks_interior
    assert a.clicks_border == b.clicks_border
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(record.gt_labels, before)
    a.labels[0, 0] = 99  # receipts hold copies
    assert record.gt_labels[4, 4] != 99 or before[4, 4] == record.gt_labels[4, 4]


def test_c100_equals_total_vertices(tiny_dataset):
    total = 0
    for image_id in tiny_dataset.train_ids:
        record = tiny_dataset.image(image_id)
        total += region_cost_gt(Region(image_id, 0, 0, 32), record)
    assert total == tiny_dataset.train_vertices()
