"""Sliding-window scoring of fixed-size square regions.

Pipeline per round: box-sum aggregation of per-pixel maps over all valid
window anchors (summed-area table, O(HW)), corpus-wide min-max normalization,
fusion of information and cost, then greedy non-overlap NMS per image.

A region map covers only valid anchors, shape (H-w+1, W-w+1): windows that
leave the image are never annotatable, so they get no score.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .geometry import Region

FUSE_G1 = "G1"
FUSE_G2 = "G2"
FUSE_G3 = "G3"
FUSE_INFO_ONLY = "INFO_ONLY"
FUSION_KINDS = (FUSE_G1, FUSE_G2, FUSE_G3, FUSE_INFO_ONLY)


@dataclass(frozen=True)
class FusionConfig:
    kind: str = FUSE_INFO_ONLY
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in FUSION_KINDS:
            raise ConfigError(f"fusion kind must be one of {FUSION_KINDS}, got {self.kind!r}")
        if self.kind == FUSE_G3:
            if self.alpha is None or not (0.0 <= self.alpha <= 1.0):
                raise ConfigError(f"G3 fusion requires alpha in [0, 1], got {self.alpha!r}")
        elif self.alpha is not None:
            raise ConfigError(f"alpha is only meaningful for G3, got kind {self.kind!r}")

    @property
    def uses_cost(self) -> bool:
        return self.kind != FUSE_INFO_ONLY


@dataclass(frozen=True)
class RegionProposal:
    region: Region
    score: float


def box_aggregate(values: np.ndarray, window: int) -> np.ndarray:
    """Box sums of a 2-D map over every valid w x w anchor,
    shape (H-w+1, W-w+1)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DataError(f"box_aggregate expects a 2-D map, got {values.shape}")
    h, w = values.shape
    win = window
    if win <= 0 or win > min(h, w):
        raise ConfigError(f"window {win} does not fit a {h}x{w} map")
    # Zero-padded summed-area table: sat[i, j] = sum(values[:i, :j]).
    sat = np.zeros((h + 1, w + 1), dtype=np.float64)
    np.cumsum(values, axis=0, out=sat[1:, 1:])
    np.cumsum(sat[1:, 1:], axis=1, out=sat[1:, 1:])
    ah, aw = h - win + 1, w - win + 1
    return sat[win:, win:] - sat[:ah, win:] - sat[win:, :aw] + sat[:ah, :aw]


def anchor_validity(
    height: int, width: int, window: int, excluded: Sequence[Region]
) -> np.ndarray:
    """Boolean map over anchors; False where the window would overlap an
    excluded (already labeled) region."""
    ah, aw = height - window + 1, width - window + 1
    valid = np.ones((ah, aw), dtype=bool)
    for reg in excluded:
        r_lo = max(reg.row - window + 1, 0)
        r_hi = min(reg.row + reg.size, ah)  # exclusive
        c_lo = max(reg.col - window + 1, 0)
        c_hi = min(reg.col + reg.size, aw)
        if r_lo < r_hi and c_lo < c_hi:
            valid[r_lo:r_hi, c_lo:c_hi] = False
    return valid


def normalize_corpus(
    region_maps: dict[str, np.ndarray],
    valid_masks: dict[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """Linearly rescale all maps jointly so the corpus-wide min maps to 0 and
    max to 1. Statistics run over valid anchors only when masks are given; a
    constant corpus maps to all-zeros."""
    if not region_maps:
        raise DataError("normalize_corpus needs at least one region map")
    lo, hi = np.inf, -np.inf
    for image_id, values in region_maps.items():
        if not np.all(np.isfinite(values)):
            raise DataError(f"{image_id}: non-finite region map")
        pool = values if valid_masks is None else values[valid_masks[image_id]]
        if pool.size == 0:
            continue
        lo = min(lo, float(pool.min()))
        hi = max(hi, float(pool.max()))
    if not np.isfinite(lo) or hi <= lo:
        return {image_id: np.zeros_like(v) for image_id, v in region_maps.items()}
    scale = 1.0 / (hi - lo)
    return {
        image_id: np.clip((v - lo) * scale, 0.0, 1.0) for image_id, v in region_maps.items()
    }


def fuse(info: np.ndarray, cost: np.ndarray | None, cfg: FusionConfig) -> np.ndarray:
    """Combine normalized region information and cost maps."""
    if cfg.kind == FUSE_INFO_ONLY:
        return np.asarray(info, dtype=np.float64)
    if cost is None:
        raise DataError(f"fusion {cfg.kind} needs a cost map")
    info = np.asarray(info, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    if info.shape != cost.shape:
        raise DataError(f"fusion shape mismatch: {info.shape} vs {cost.shape}")
    if cfg.kind == FUSE_G1:
        return info / (1.0 + cost)
    if cfg.kind == FUSE_G2:
        return (1.0 - cost) * info
    alpha = float(cfg.alpha)
    return info * alpha + (1.0 - cost) * (1.0 - alpha)


def nms_per_image(
    fused: np.ndarray,
    image_id: str,
    window: int,
    excluded: Sequence[Region],
    height: int,
    width: int,
) -> list[RegionProposal]:
    """Greedy non-overlap NMS to maximum coverage.

    Repeatedly takes the highest-scoring valid anchor (ties: lexicographic
    (row, col)), suppressing every anchor whose window would overlap it, until
    no valid anchor remains.
    """
    fused = np.asarray(fused, dtype=np.float64)
    if not np.all(np.isfinite(fused)):
        raise DataError(f"{image_id}: non-finite fused map")
    ah, aw = fused.shape
    if (ah, aw) != (height - window + 1, width - window + 1):
        raise DataError(
            f"{image_id}: fused map {fused.shape} inconsistent with "
            f"{height}x{width} image and window {window}"
        )
    valid = anchor_validity(height, width, window, excluded)
    proposals: list[RegionProposal] = []
    scores = fused.copy()
    scores[~valid] = -np.inf
    remaining = int(valid.sum())
    while remaining > 0:
        flat = int(np.argmax(scores))  # first max in row-major = (row, col) tie-break
        r, c = divmod(flat, aw)
        proposals.append(
            RegionProposal(region=Region(image_id, r, c, window), score=float(fused[r, c]))
        )
        r_lo, r_hi = max(r - window + 1, 0), min(r + window, ah)
        c_lo, c_hi = max(c - window + 1, 0), min(c + window, aw)
        block = scores[r_lo:r_hi, c_lo:c_hi]
        remaining -= int(np.isfinite(block).sum())
        block[...] = -np.inf
    return proposals
