"""Round-level query strategies: budgeted region top-K plus image baselines."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import ConfigError
from .geometry import Region
from .pool import PoolState
from .region_engine import FusionConfig, RegionProposal, anchor_validity

STRATEGY_IMAGE_RANDOM = "IMAGE_RANDOM"
STRATEGY_IMAGE_SCORE = "IMAGE_SCORE"
STRATEGY_REGION_RANDOM = "REGION_RANDOM"
STRATEGY_REGION_SCORE = "REGION_SCORE"
STRATEGIES = (
    STRATEGY_IMAGE_RANDOM,
    STRATEGY_IMAGE_SCORE,
    STRATEGY_REGION_RANDOM,
    STRATEGY_REGION_SCORE,
)

MEASURE_ENTROPY = "ENTROPY"
MEASURE_VOTE_ENTROPY = "VOTE_ENTROPY"
MEASURE_NONE = "NONE"
MEASURES = (MEASURE_ENTROPY, MEASURE_VOTE_ENTROPY, MEASURE_NONE)


@dataclass(frozen=True)
class AcquisitionConfig:
    strategy: str = STRATEGY_REGION_SCORE
    measure: str = MEASURE_ENTROPY
    fusion: FusionConfig = field(default_factory=FusionConfig)
    region_size: int | None = 32
    m: int = 4  # images-per-round equivalent

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.measure not in MEASURES:
            raise ConfigError(f"unknown measure {self.measure!r}")
        if self.strategy.startswith("REGION") and not self.region_size:
            raise ConfigError("region strategies require region_size")
        if self.strategy.endswith("SCORE") and self.measure == MEASURE_NONE:
            raise ConfigError(f"{self.strategy} requires an information measure")
        if self.m <= 0:
            raise ConfigError(f"m must be positive, got {self.m}")


@dataclass
class Batch:
    regions: list[Region]
    total_pixels: int
    scores: list[float] = field(default_factory=list)


def pixel_budget(dataset: Dataset, m: int) -> int:
    """Pixel budget equivalent to labeling m whole images."""
    if m <= 0:
        raise ConfigError(f"m must be positive, got {m}")
    return m * dataset.pixels_per_image()


def select_batch(proposals: list[RegionProposal], budget: int) -> Batch:
    """Take proposals by descending score until the next would exceed the
    budget, then stop (no knapsack backfill). Ties break on
    (image_id, row, col)."""
    ordered = sorted(
        proposals,
        key=lambda p: (-p.score, p.region.image_id, p.region.row, p.region.col),
    )
    regions: list[Region] = []
    scores: list[float] = []
    total = 0
    for prop in ordered:
        if total + prop.region.area > budget:
            break
        regions.append(prop.region)
        scores.append(prop.score)
        total += prop.region.area
    return Batch(regions=regions, total_pixels=total, scores=scores)


def score_images(info_maps: dict[str, np.ndarray]) -> dict[str, float]:
    """Whole-image score: accumulated per-pixel information content."""
    return {image_id: float(np.sum(v)) for image_id, v in info_maps.items()}


def top_images(scores: dict[str, float], m: int) -> list[str]:
    """m best-scoring image ids; equal scores fall back to id order."""
    ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return [image_id for image_id, _ in ordered[:m]]


def random_regions(
    pool: PoolState, dataset: Dataset, window: int, budget: int, rng_seed: int
) -> Batch:
    """Uniformly sample valid non-overlapping regions until budget-maximal.

    Uniform over all currently-valid (image, anchor) pairs; each draw
    suppresses the overlapping anchors of its image.
    """
    rng = np.random.default_rng(rng_seed)
    h, w = dataset.height, dataset.width
    ids = sorted(dataset.train_ids)
    valid = {
        image_id: anchor_validity(h, w, window, pool.regions_for(image_id))
        for image_id in ids
    }
    counts = np.array([int(valid[i].sum()) for i in ids], dtype=np.int64)
    regions: list[Region] = []
    total = 0
    area = window * window
    ah, aw = h - window + 1, w - window + 1
    while total + area <= budget and counts.sum() > 0:
        pick = int(rng.integers(counts.sum()))
        img_idx = int(np.searchsorted(np.cumsum(counts), pick, side="right"))
        image_id = ids[img_idx]
        offset = pick - int(np.cumsum(counts)[img_idx - 1]) if img_idx else pick
        flat = int(np.flatnonzero(valid[image_id].ravel())[offset])
        r, c = divmod(flat, aw)
        regions.append(Region(image_id, r, c, window))
        total += area
        mask = valid[image_id]
        r_lo, r_hi = max(r - window + 1, 0), min(r + window, ah)
        c_lo, c_hi = max(c - window + 1, 0), min(c + window, aw)
        mask[r_lo:r_hi, c_lo:c_hi] = False
        counts[img_idx] = int(mask.sum())
    return Batch(regions=regions, total_pixels=total, scores=[0.0] * len(regions))
