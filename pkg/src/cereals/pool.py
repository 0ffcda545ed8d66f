"""Labeled/unlabeled pool state machine.

A pool partitions every training image into labeled regions (revealed ground
truth) and unlabeled remainder. Seed images are modeled as one full-image
region so pixels and clicks flow through a single accounting path. Pool
states are treated as immutable snapshots: mutations return a new state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, DataError, InvariantError
from .geometry import UNLABELED, Region


@dataclass
class PoolState:
    labeled_regions: dict[str, tuple[Region, ...]]
    revealed_labels: dict[str, np.ndarray]  # (H, W) int16, UNLABELED where hidden
    round_index: int
    rng_seed: int

    def regions_for(self, image_id: str) -> tuple[Region, ...]:
        return self.labeled_regions.get(image_id, ())

    def labeled_pixels(self, image_id: str | None = None) -> int:
        if image_id is not None:
            return sum(r.area for r in self.regions_for(image_id))
        return sum(r.area for regs in self.labeled_regions.values() for r in regs)

    def revealed_for(self, image_id: str, height: int, width: int) -> np.ndarray:
        if image_id in self.revealed_labels:
            return self.revealed_labels[image_id]
        return np.full((height, width), UNLABELED, dtype=np.int16)

    def is_fully_labeled(self, image_id: str, height: int, width: int) -> bool:
        return self.labeled_pixels(image_id) == height * width


def label_mask(pool: PoolState, dataset: Dataset, image_id: str) -> np.ndarray:
    """Boolean (H, W) mask, true exactly on the union of labeled regions."""
    if image_id not in dataset.all_ids:
        raise DataError(f"unknown image_id {image_id!r}")
    mask = np.zeros((dataset.height, dataset.width), dtype=bool)
    for reg in pool.regions_for(image_id):
        rs, cs = reg.slices()
        mask[rs, cs] = True
    return mask


def seed_image_ids(dataset: Dataset, n: int, rng_seed: int) -> list[str]:
    """Deterministic uniform sample of n train image ids."""
    if n <= 0 or n > len(dataset.train_ids):
        raise ConfigError(
            f"seed size n={n} outside (0, {len(dataset.train_ids)}]"
        )
    rng = np.random.default_rng(rng_seed)
    ids = sorted(dataset.train_ids)
    chosen = sorted(rng.choice(len(ids), size=n, replace=False).tolist())
    return [ids[i] for i in chosen]


def seed_pool(dataset: Dataset, n: int, rng_seed: int) -> PoolState:
    """Uniformly sample n train images to be fully labeled."""
    if dataset.height != dataset.width:
        raise ConfigError("full-image seed regions require square images")
    labeled: dict[str, tuple[Region, ...]] = {}
    revealed: dict[str, np.ndarray] = {}
    for image_id in seed_image_ids(dataset, n, rng_seed):
        record = dataset.image(image_id)
        region = Region(image_id=image_id, row=0, col=0, size=dataset.height)
        labeled[image_id] = (region,)
        revealed[image_id] = record.gt_labels.copy()
    return PoolState(labeled_regions=labeled, revealed_labels=revealed, round_index=0, rng_seed=rng_seed)


def commit_regions(
    pool: PoolState,
    dataset: Dataset,
    answered: list[tuple[Region, np.ndarray]],
) -> PoolState:
    """Add annotated regions, returning the next round's pool state."""
    batch = [reg for reg, _ in answered]
    for i, first in enumerate(batch):
        first.validate(dataset.height, dataset.width)
        for second in batch[i + 1 :]:
            if first.overlaps(second):
                raise InvariantError(f"batch regions overlap: {first} / {second}")
        for existing in pool.regions_for(first.image_id):
            if first.overlaps(existing):
                raise InvariantError(f"region {first} overlaps labeled {existing}")

    labeled = dict(pool.labeled_regions)
    revealed = dict(pool.revealed_labels)
    for reg, patch in answered:
        patch = np.asarray(patch)
        if patch.shape != (reg.size, reg.size):
            raise DataError(
                f"patch shape {patch.shape} does not match region size {reg.size}"
            )
        labeled[reg.image_id] = labeled.get(reg.image_id, ()) + (reg,)
        canvas = revealed.get(reg.image_id)
        if canvas is None:
            canvas = np.full((dataset.height, dataset.width), UNLABELED, dtype=np.int16)
        else:
            canvas = canvas.copy()
        rs, cs = reg.slices()
        canvas[rs, cs] = patch.astype(np.int16)
        revealed[reg.image_id] = canvas
    return PoolState(
        labeled_regions=labeled,
        revealed_labels=revealed,
        round_index=pool.round_index + 1,
        rng_seed=pool.rng_seed,
    )


def revealed_pixel_count(pool: PoolState) -> int:
    return int(sum((arr != UNLABELED).sum() for arr in pool.revealed_labels.values()))


def save_pool(pool: PoolState, path: str | Path) -> None:
    payload = {
        "round_index": pool.round_index,
        "rng_seed": pool.rng_seed,
        "regions": {
            image_id: [r.to_json() for r in regs]
            for image_id, regs in sorted(pool.labeled_regions.items())
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))


def load_pool(path: str | Path, dataset: Dataset) -> PoolState:
    """Rebuild a pool from its checkpoint; revealed labels come from gt."""
    with open(path) as fh:
        payload = json.load(fh)
    labeled: dict[str, tuple[Region, ...]] = {}
    revealed: dict[str, np.ndarray] = {}
    for image_id, regs in payload["regions"].items():
        record = dataset.image(image_id)
        regions = tuple(Region(image_id, int(r), int(c), int(s)) for r, c, s in regs)
        canvas = np.full((dataset.height, dataset.width), UNLABELED, dtype=np.int16)
        for reg in regions:
            rs, cs = reg.slices()
            canvas[rs, cs] = record.gt_labels[rs, cs]
        labeled[image_id] = regions
        revealed[image_id] = canvas
    return PoolState(
        labeled_regions=labeled,
        revealed_labels=revealed,
        round_index=int(payload["round_index"]),
        rng_seed=int(payload["rng_seed"]),
    )
