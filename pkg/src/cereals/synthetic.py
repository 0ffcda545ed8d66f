"""Synthetic polygon-scene dataset generator.

Each image is partitioned into convex cells (Voronoi diagram of seeded
sites, clipped to the image rectangle); every cell carries one semantic
class, its polygon supplies the click ground truth, and per-pixel features
are the class mean plus Gaussian noise, with the last channel a spatially
blurred copy of channel 0 so class boundaries look ambiguous in feature
space.

Three structural knobs shape the active-learning problem. Rare classes
appear in only a fraction of images (and occupy large cells there). Each
image draws a per-class offset in dedicated style channels: the offsets are
zero-mean over the corpus, so a model trained on everything ignores the
style channels, while a model that has seen a class in few images mistakes
that image's style for signal and misreads the class elsewhere; a class is
only fully learned once labels for it have been seen across many images.
Finally, the cell count varies widely between images, so annotation cost is
far from uniform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .dataset import Dataset, ImageRecord, load_dataset, save_dataset_index, save_image
from .errors import ConfigError
from .geometry import Polygon


@dataclass
class DatasetSpec:
    train_images: int = 200
    val_images: int = 40
    height: int = 128
    width: int = 128
    num_classes: int = 4
    feature_channels: int = 6  # informative + style channels + 1 blurred copy
    style_channels: int = 2
    sites_min: int = 8
    sites_max: int = 40
    noise: float = 0.35
    blur_sigma: float = 1.5
    separation: float = 2.0
    # Per-class probability that a class occurs in a given image at all.
    class_presence: list[float] = field(default_factory=lambda: [1.0, 1.0, 0.08, 0.08])
    # Relative cell-assignment weight for classes present in an image.
    class_cell_weight: list[float] = field(default_factory=lambda: [1.0, 1.0, 0.55, 0.55])
    # Std of the per-image appearance offset each class draws; a class is only
    # fully learned after labels from many images have been seen.
    class_drift: list[float] = field(default_factory=lambda: [0.15, 0.15, 1.6, 1.6])
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.feature_channels < self.style_channels + 2:
            raise ConfigError(
                "need feature_channels >= style_channels + 2 (informative + blur)"
            )
        if self.sites_min < self.num_classes:
            raise ConfigError("more classes than minimum sites per image")
        if self.sites_min > self.sites_max:
            raise ConfigError("sites_min > sites_max")
        if len(self.class_presence) != self.num_classes:
            raise ConfigError("class_presence length must equal num_classes")
        if len(self.class_cell_weight) != self.num_classes:
            raise ConfigError("class_cell_weight length must equal num_classes")
        if len(self.class_drift) != self.num_classes:
            raise ConfigError("class_drift length must equal num_classes")
        if min(self.class_cell_weight[:2]) <= 0:
            raise ConfigError("classes 0 and 1 need positive cell weight")
        if self.train_images <= 0 or self.val_images <= 0:
            raise ConfigError("need positive split sizes")
        if self.height != self.width:
            raise ConfigError("square images required (square seed regions)")

    def to_json(self) -> dict:
        return {
            "train_images": self.train_images,
            "val_images": self.val_images,
            "height": self.height,
            "width": self.width,
            "num_classes": self.num_classes,
            "feature_channels": self.feature_channels,
            "style_channels": self.style_channels,
            "sites_min": self.sites_min,
            "sites_max": self.sites_max,
            "noise": self.noise,
            "blur_sigma": self.blur_sigma,
            "separation": self.separation,
            "class_presence": list(self.class_presence),
            "class_cell_weight": list(self.class_cell_weight),
            "class_drift": list(self.class_drift),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "DatasetSpec":
        return cls(**data)


def class_means(spec: DatasetSpec) -> np.ndarray:
    """Deterministic class-mean layout in the informative feature dims.

    Classes 0 and 1 sit far apart; every further class sits near the
    midpoint of that axis, displaced into a fresh dimension, so undersampled
    classes are exactly the confusable ones. Style channels carry no mean.
    """
    dims = spec.feature_channels - 1 - spec.style_channels
    s = spec.separation
    means = np.zeros((spec.num_classes, dims))
    if spec.num_classes > 1:
        means[1, 0] = s
    for i in range(2, spec.num_classes):
        means[i, 0] = s / 2
        d = 1 + (i - 2) % max(dims - 1, 1)
        sign = 1.0 if ((i - 2) // max(dims - 1, 1)) % 2 == 0 else -1.0
        means[i, d % dims] += sign * 0.35 * s
    return means


def _clip_halfplane(poly: list[tuple[float, float]], a, b, k) -> list[tuple[float, float]]:
    """Sutherland-Hodgman clip of a convex polygon to a*r + b*c <= k."""
    out: list[tuple[float, float]] = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        fp = a * p[0] + b * p[1] - k
        fq = a * q[0] + b * q[1] - k
        if fp <= 0:
            out.append(p)
            if fq > 0:
                t = fp / (fp - fq)
                out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
        elif fq <= 0:
            t = fp / (fp - fq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def voronoi_cell_polygon(
    sites: np.ndarray, index: int, height: int, width: int
) -> list[tuple[float, float]]:
    """Convex cell of one site: the image rectangle clipped by the K-1
    perpendicular-bisector half-planes."""
    poly = [(0.0, 0.0), (0.0, float(width)), (float(height), float(width)), (float(height), 0.0)]
    si = sites[index]
    for j in range(len(sites)):
        if j == index or not poly:
            continue
        sj = sites[j]
        # closer to si than sj:  2*(sj-si).p <= |sj|^2 - |si|^2
        a = 2.0 * (sj[0] - si[0])
        b = 2.0 * (sj[1] - si[1])
        k = float(sj @ sj - si @ si)
        poly = _clip_halfplane(poly, a, b, k)
    return poly


def _dedupe(poly: list[tuple[float, float]], height: int, width: int) -> list[tuple[float, float]]:
    cleaned: list[tuple[float, float]] = []
    for r, c in poly:
        r = min(max(r, 0.0), float(height))
        c = min(max(c, 0.0), float(width))
        if cleaned and abs(r - cleaned[-1][0]) < 1e-9 and abs(c - cleaned[-1][1]) < 1e-9:
            continue
        cleaned.append((r, c))
    if len(cleaned) > 1 and abs(cleaned[0][0] - cleaned[-1][0]) < 1e-9 and abs(cleaned[0][1] - cleaned[-1][1]) < 1e-9:
        cleaned.pop()
    return cleaned


def _assign_cell_classes(
    spec: DatasetSpec, rng: np.random.Generator, cell_areas: np.ndarray, enabled: np.ndarray
) -> np.ndarray:
    """Class per cell. Enabled rare classes (index >= 2) draw their cell
    counts first and claim mid-to-large cells (largest skipped), so rare
    classes form compact coherent cells that reward precise region queries
    while staying cheap to annotate."""
    k = len(cell_areas)
    weights = np.where(enabled, np.asarray(spec.class_cell_weight, dtype=np.float64), 0.0)
    weights /= weights.sum()
    counts = rng.multinomial(k, weights)
    classes = np.full(k, -1, dtype=np.int64)
    order = np.argsort(-cell_areas, kind="stable")
    large_pool = list(order[max(k // 8, 1) : max(k // 2, 2)])
    for c in range(2, spec.num_classes):
        take = min(counts[c], len(large_pool))
        if take > 0:
            picked = rng.choice(len(large_pool), size=take, replace=False)
            for idx in sorted(picked.tolist(), reverse=True):
                classes[large_pool.pop(idx)] = c
    common = np.flatnonzero(classes < 0)
    common_weights = weights[:2] / weights[:2].sum()
    classes[common] = rng.choice(2, size=len(common), p=common_weights)
    return classes


def generate_image(
    spec: DatasetSpec, image_id: str, rng: np.random.Generator, means: np.ndarray
) -> ImageRecord:
    h, w = spec.height, spec.width
    k = int(rng.integers(spec.sites_min, spec.sites_max + 1))
    sites = np.column_stack([rng.uniform(0, h, size=k), rng.uniform(0, w, size=k)])
    enabled = np.array(
        [c < 2 or rng.random() < spec.class_presence[c] for c in range(spec.num_classes)]
    )

    # Nearest-site labeling at pixel centers; argmin takes the lowest index on ties.
    rr, cc = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    d2 = (rr[..., None] - sites[:, 0]) ** 2 + (cc[..., None] - sites[:, 1]) ** 2
    cell_of_pixel = np.argmin(d2, axis=2)
    cell_areas = np.bincount(cell_of_pixel.ravel(), minlength=k)

    cell_class = _assign_cell_classes(spec, rng, cell_areas, enabled)
    gt_labels = cell_class[cell_of_pixel].astype(np.int16)

    polygons = []
    for i in range(k):
        poly = _dedupe(voronoi_cell_polygon(sites, i, h, w), h, w)
        if len(poly) >= 3:
            polygons.append(Polygon(class_id=int(cell_class[i]), vertices=tuple(poly)))

    dims = spec.feature_channels - 1
    style = rng.normal(size=(spec.num_classes, spec.style_channels))
    style *= np.asarray(spec.class_drift)[:, None]
    per_class = np.concatenate([means, style], axis=1)  # (C, dims)
    noise = rng.normal(0.0, spec.noise, size=(h, w, dims))
    planes = per_class[gt_labels] + noise
    blurred = gaussian_filter(planes[:, :, 0], sigma=spec.blur_sigma)
    features = np.concatenate([planes, blurred[:, :, None]], axis=2).astype(np.float32)

    return ImageRecord(
        image_id=image_id, features=features, gt_labels=gt_labels, gt_polygons=polygons
    )


def _image_rng(spec_seed: int, split: str, index: int) -> np.random.Generator:
    tag = 1 if split == "train" else 2
    return np.random.default_rng(np.random.SeedSequence([spec_seed, tag, index]))


FORCED_VAL_PRESENCE = 4  # first val images carry every class: keeps mIoU well-defined


def generate_dataset(spec: DatasetSpec, out_dir: str | Path) -> Dataset:
    """Write a dataset directory; byte-identical for identical specs."""
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    means = class_means(spec)
    train_ids = [f"img_{i:04d}" for i in range(spec.train_images)]
    val_ids = [f"val_{i:04d}" for i in range(spec.val_images)]
    for index, image_id in enumerate(train_ids):
        rng = _image_rng(spec.seed, "train", index)
        save_image(out, generate_image(spec, image_id, rng, means))
    for index, image_id in enumerate(val_ids):
        rng = _image_rng(spec.seed, "val", index)
        forced = spec if index >= FORCED_VAL_PRESENCE else _all_present(spec)
        save_image(out, generate_image(forced, image_id, rng, means))
    save_dataset_index(
        out,
        num_classes=spec.num_classes,
        height=spec.height,
        width=spec.width,
        feature_channels=spec.feature_channels,
        train_ids=train_ids,
        val_ids=val_ids,
        meta={"generator": spec.to_json()},
    )
    return load_dataset(out)


def _all_present(spec: DatasetSpec) -> DatasetSpec:
    clone = DatasetSpec(**spec.to_json())
    clone.class_presence = [1.0] * spec.num_classes
    return clone
