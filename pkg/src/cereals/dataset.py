"""Dataset model and on-disk layout.

A dataset directory contains `dataset.json` (class count, splits, provenance)
plus one subdirectory per image under `images/`:

    images/<image_id>/features.dmt    float32 (H, W, F)
    images/<image_id>/labels.dmt      class ids as float32 (H, W, 1)
    images/<image_id>/polygons.json   [{"class_id": k, "vertices": [[r, c], ...]}]
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dmt import read_dmt, write_dmt
from .errors import DataError
from .geometry import Polygon


@dataclass
class ImageRecord:
    image_id: str
    features: np.ndarray  # (H, W, F) float32
    gt_labels: np.ndarray  # (H, W) int16
    gt_polygons: list[Polygon]
    features_path: str | None = None  # set when loaded from disk

    @property
    def height(self) -> int:
        return self.gt_labels.shape[0]

    @property
    def width(self) -> int:
        return self.gt_labels.shape[1]

    @property
    def vertex_count(self) -> int:
        return sum(len(p.vertices) for p in self.gt_polygons)

    def validate(self, num_classes: int) -> None:
        if self.features.shape[:2] != self.gt_labels.shape:
            raise DataError(
                f"{self.image_id}: features {self.features.shape[:2]} vs "
                f"labels {self.gt_labels.shape}"
            )
        if self.gt_labels.min() < 0 or self.gt_labels.max() >= num_classes:
            raise DataError(f"{self.image_id}: gt label outside [0, {num_classes - 1}]")
        for poly in self.gt_polygons:
            if not (0 <= poly.class_id < num_classes):
                raise DataError(f"{self.image_id}: polygon class {poly.class_id}")
            for r, c in poly.vertices:
                if not (0 <= r <= self.height and 0 <= c <= self.width):
                    raise DataError(f"{self.image_id}: vertex {(r, c)} out of bounds")


@dataclass
class Dataset:
    root: Path
    num_classes: int
    height: int
    width: int
    feature_channels: int
    train_ids: list[str]
    val_ids: list[str]
    meta: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def all_ids(self) -> list[str]:
        return self.train_ids + self.val_ids

    def image(self, image_id: str) -> ImageRecord:
        if image_id not in self._cache:
            self._cache[image_id] = load_image(self.root, image_id)
        return self._cache[image_id]

    def pixels_per_image(self) -> int:
        return self.height * self.width

    def train_pixels(self) -> int:
        return len(self.train_ids) * self.pixels_per_image()

    def train_vertices(self) -> int:
        return sum(self.image(i).vertex_count for i in self.train_ids)

    def fingerprint(self) -> str:
        import hashlib

        blob = json.dumps(
            {
                "classes": self.num_classes,
                "height": self.height,
                "width": self.width,
                "channels": self.feature_channels,
                "train": self.train_ids,
                "val": self.val_ids,
                "meta": self.meta,
            },
            sort_keys=True,
        ).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def image_dir(root: Path, image_id: str) -> Path:
    return Path(root) / "images" / image_id


def save_image(root: Path, record: ImageRecord) -> None:
    d = image_dir(root, record.image_id)
    d.mkdir(parents=True, exist_ok=True)
    write_dmt(d / "features.dmt", record.features)
    write_dmt(d / "labels.dmt", record.gt_labels.astype(np.float32))
    polys = [
        {"class_id": p.class_id, "vertices": [[float(r), float(c)] for r, c in p.vertices]}
        for p in record.gt_polygons
    ]
    with open(d / "polygons.json", "w") as fh:
        json.dump(polys, fh, sort_keys=True, separators=(",", ":"))


def load_image(root: Path, image_id: str) -> ImageRecord:
    d = image_dir(root, image_id)
    if not d.is_dir():
        raise DataError(f"no such image directory: {d}")
    features = read_dmt(d / "features.dmt")
    labels = read_dmt(d / "labels.dmt")[:, :, 0].astype(np.int16)
    with open(d / "polygons.json") as fh:
        raw = json.load(fh)
    polygons = [
        Polygon(class_id=int(p["class_id"]), vertices=tuple((float(r), float(c)) for r, c in p["vertices"]))
        for p in raw
    ]
    return ImageRecord(
        image_id=image_id,
        features=features,
        gt_labels=labels,
        gt_polygons=polygons,
        features_path=str(d / "features.dmt"),
    )


def save_dataset_index(
    root: Path,
    *,
    num_classes: int,
    height: int,
    width: int,
    feature_channels: int,
    train_ids: list[str],
    val_ids: list[str],
    meta: dict,
) -> None:
    index = {
        "num_classes": num_classes,
        "height": height,
        "width": width,
        "feature_channels": feature_channels,
        "train_ids": train_ids,
        "val_ids": val_ids,
        "meta": meta,
    }
    with open(Path(root) / "dataset.json", "w") as fh:
        json.dump(index, fh, sort_keys=True, indent=2)


def load_dataset(root: str | Path) -> Dataset:
    root = Path(root)
    index_path = root / "dataset.json"
    if not index_path.is_file():
        raise DataError(f"{root} is not a dataset directory (missing dataset.json)")
    with open(index_path) as fh:
        index = json.load(fh)
    return Dataset(
        root=root,
        num_classes=int(index["num_classes"]),
        height=int(index["height"]),
        width=int(index["width"]),
        feature_channels=int(index["feature_channels"]),
        train_ids=list(index["train_ids"]),
        val_ids=list(index["val_ids"]),
        meta=dict(index.get("meta", {})),
    )
