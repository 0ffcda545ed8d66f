"""Per-pixel annotation-cost maps measured in clicks.

Three sources: a ground-truth oracle (rasterized polygon vertices), the
built-in trainable pixelwise regressor, or an external worker. Ground-truth
click maps clip at 10 clicks per pixel; effort *accounting* elsewhere uses
unclipped vertex counts.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .dataset import Dataset
from .errors import StateError
from .geometry import Polygon, vertex_pixel
from .pool import PoolState, label_mask

CLICK_CLIP = 10.0

COST_MODE_ORACLE = "oracle"
COST_MODE_BUILTIN = "builtin"
COST_MODE_EXTERNAL = "external"
COST_MODES = (COST_MODE_ORACLE, COST_MODE_BUILTIN, COST_MODE_EXTERNAL)


def rasterize_clicks(
    polygons: Sequence[Polygon], height: int, width: int, clip: float = CLICK_CLIP
) -> np.ndarray:
    """Each polygon vertex adds one click to the pixel containing it;
    per-pixel totals are clipped. Returns float64 (H, W)."""
    clicks = np.zeros((height, width), dtype=np.float64)
    for poly in polygons:
        for vertex in poly.vertices:
            r, c = vertex_pixel(vertex, height, width)
            clicks[r, c] += 1.0
    if clip is not None:
        np.minimum(clicks, clip, out=clicks)
    return clicks


def oracle_cost_map(dataset: Dataset, image_id: str) -> np.ndarray:
    record = dataset.image(image_id)
    return rasterize_clicks(record.gt_polygons, record.height, record.width)


def predict_cost_map(learner, dataset: Dataset, image_id: str, mode: str) -> np.ndarray:
    """Cost map for one image under the configured mode. `learner` may be
    None in oracle mode."""
    if mode == COST_MODE_ORACLE:
        return oracle_cost_map(dataset, image_id)
    if mode in (COST_MODE_BUILTIN, COST_MODE_EXTERNAL):
        if learner is None or not learner.cost_trained:
            raise StateError(f"cost mode {mode!r} requires a trained cost model")
        return learner.predict_cost(dataset.image(image_id))
    raise StateError(f"unknown cost mode {mode!r}")


def cost_training_targets(
    pool: PoolState, dataset: Dataset
) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """(image_id, click map zeroed outside labeled regions, label mask) for
    every image with labeled pixels. Regression supervision is masked MSE."""
    if pool.labeled_pixels() == 0:
        raise StateError("cost training requires at least one labeled region")
    targets = []
    for image_id in sorted(pool.labeled_regions):
        regions = pool.regions_for(image_id)
        if not regions:
            continue
        mask = label_mask(pool, dataset, image_id)
        clicks = oracle_cost_map(dataset, image_id)
        clicks[~mask] = 0.0
        targets.append((image_id, clicks, mask))
    return targets
