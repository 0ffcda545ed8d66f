"""Pixelwise models behind the worker commands.

Segmentation is softmax regression over the image's feature planes plus two
normalized coordinate planes; the cost head is linear regression over the
same inputs plus a predicted-boundary-density plane and the gap between the
first and last feature channel. Both train from scratch per request with
seeded mini-batch Adam, masked losses, and best-snapshot early stopping, so
a request is answered identically every time it is repeated.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

UNLABELED = -1.0

LEARNING_RATE = 0.1
COST_LEARNING_RATE = 0.05
BATCH = 4096
EPOCH_PIXELS = 40_000
L2 = 1e-6
SAMPLE_CAP = 300_000


def stable_seed(*parts) -> int:
    mixed = []
    for part in parts:
        if isinstance(part, str):
            mixed.append(zlib.crc32(part.encode()))
        else:
            mixed.append(int(part) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(mixed).generate_state(1)[0])


def with_coords(features: np.ndarray) -> np.ndarray:
    """(H, W, F) -> (H*W, F+2) float64 with row/col planes in [0, 1]."""
    h, w, _ = features.shape
    planes = features.reshape(h * w, -1).astype(np.float64)
    rows = np.repeat(np.arange(h) / max(h - 1, 1), w)
    cols = np.tile(np.arange(w) / max(w - 1, 1), h)
    return np.column_stack([planes, rows, cols])


def softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=1, keepdims=True)
    return shifted


def miou(pred: np.ndarray, gt: np.ndarray, classes: int) -> float:
    return miou_accumulated([(pred, gt)], classes)


def miou_accumulated(pairs, classes: int) -> float:
    """Mean IoU with TP/FP/FN accumulated over all pairs; classes with empty
    union are excluded from the mean."""
    tp = np.zeros(classes, dtype=np.int64)
    pred_count = np.zeros(classes, dtype=np.int64)
    gt_count = np.zeros(classes, dtype=np.int64)
    for pred, gt in pairs:
        for c in range(classes):
            tp[c] += np.sum((pred == c) & (gt == c))
            pred_count[c] += np.sum(pred == c)
            gt_count[c] += np.sum(gt == c)
    union = pred_count + gt_count - tp
    present = union > 0
    if not present.any():
        return 0.0
    return float(np.mean(tp[present] / union[present]))


class AdamState:
    def __init__(self, shape, lr):
        self.lr = lr
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def update(self, params, grad, b1=0.9, b2=0.999, eps=1e-8):
        self.t += 1
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad**2
        m_hat = self.m / (1 - b1**self.t)
        v_hat = self.v / (1 - b2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class TrainOutcome:
    epochs_run: int
    best_score: float
    converged: bool


def _epoch_loop(n, rng, do_step, score_fn, patience, max_epochs):
    steps = max(1, -(-min(n, EPOCH_PIXELS) // BATCH))
    best, snapshot, stale, epochs = -np.inf, None, 0, 0
    converged = False
    for _ in range(max_epochs):
        epochs += 1
        for _ in range(steps):
            do_step(rng.integers(0, n, size=min(BATCH, n)))
        score, snap = score_fn()
        if score > best + 1e-12:
            best, snapshot, stale = score, snap, 0
        else:
            stale += 1
            if stale >= patience:
                converged = True
                break
    return TrainOutcome(epochs, best, converged), snapshot


class WorkerModel:
    """Holds both heads; retrained from scratch on each train request."""

    def __init__(self):
        self.classes: int | None = None
        self.dropout = 0.25
        self.train_seed = 0
        self.seg_weights: np.ndarray | None = None
        self.cost_params: np.ndarray | None = None

    # -- segmentation -------------------------------------------------------

    def train_seg(self, train_items, val_items, classes, seed, patience, max_epochs, dropout):
        self.classes = int(classes)
        self.dropout = float(dropout)
        self.train_seed = int(seed)
        rng = np.random.default_rng(stable_seed(seed, "seg"))

        xs, ys = [], []
        total = 0
        for item in sorted(train_items, key=lambda it: it["image_id"]):
            labels = item["labels"][:, :, 0].ravel()
            mask = item["mask"][:, :, 0].ravel() > 0.5
            mask &= labels != UNLABELED
            x = with_coords(item["features"])[mask]
            xs.append(x)
            ys.append(labels[mask].astype(np.int64))
            total += int(mask.sum())
        if total == 0:
            raise ValueError("no labeled pixels in train set")
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        if total > SAMPLE_CAP:
            keep = np.sort(rng.choice(total, size=SAMPLE_CAP, replace=False))
            x, y = x[keep], y[keep]
        xb = np.column_stack([x, np.ones(len(y))])

        val = [
            (
                np.column_stack([with_coords(item["features"]), np.ones(item["features"].shape[0] * item["features"].shape[1])]),
                item["labels"][:, :, 0].astype(np.int64),
            )
            for item in val_items
        ]

        weights = np.zeros((xb.shape[1], self.classes))
        adam = AdamState(weights.shape, LEARNING_RATE)

        def do_step(idx):
            nonlocal weights
            probs = softmax_rows(xb[idx] @ weights)
            probs[np.arange(len(idx)), y[idx]] -= 1.0
            grad = xb[idx].T @ probs / len(idx) + L2 * weights
            weights = adam.update(weights, grad)

        def score_fn():
            if not val:
                probs = softmax_rows(xb @ weights)
                eps = 1e-12
                return -float(
                    -np.mean(np.log(probs[np.arange(len(y)), y] + eps))
                ), weights.copy()
            pairs = [
                (np.argmax(vx @ weights, axis=1).reshape(gt.shape), gt) for vx, gt in val
            ]
            return miou_accumulated(pairs, self.classes), weights.copy()

        outcome, snapshot = _epoch_loop(len(y), rng, do_step, score_fn, patience, max_epochs)
        self.seg_weights = snapshot
        self.cost_params = None  # cost head is stale once the backbone moved
        return outcome

    def _require_seg(self):
        if self.seg_weights is None:
            raise RuntimeError("segmentation model not trained")

    def seg_probs(self, features: np.ndarray, drop_mask: np.ndarray | None = None) -> np.ndarray:
        self._require_seg()
        x = with_coords(features)
        if drop_mask is not None:
            x = x * drop_mask
        xb = np.column_stack([x, np.ones(len(x))])
        probs = softmax_rows(xb @ self.seg_weights)
        h, w, _ = features.shape
        return probs.reshape(h, w, self.classes)

    def committee_member(self, features: np.ndarray, image_id: str, member: int) -> np.ndarray:
        self._require_seg()
        rng = np.random.default_rng(stable_seed(self.train_seed, "committee", image_id, member))
        d = features.shape[2] + 2
        if self.dropout > 0:
            keep = (rng.random(d) >= self.dropout).astype(np.float64)
            drop_mask = keep / max(1.0 - self.dropout, 1e-9)
        else:
            drop_mask = None
        return self.seg_probs(features, drop_mask)

    # -- cost head ------------------------------------------------------------

    def _cost_inputs(self, features: np.ndarray) -> np.ndarray:
        self._require_seg()
        h, w, _ = features.shape
        labels = np.argmax(self.seg_probs(features), axis=2)
        votes = np.stack(
            [
                uniform_filter((labels == c).astype(np.float64), size=5, mode="nearest")
                for c in range(self.classes)
            ]
        )
        smooth = np.argmax(votes, axis=0)
        padded = np.pad(smooth, 1, mode="edge")
        disagree = np.zeros((h, w))
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr or dc:
                    disagree += padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w] != smooth
        gap = np.abs(features[:, :, 0].astype(np.float64) - features[:, :, -1].astype(np.float64))
        return np.column_stack(
            [with_coords(features), (disagree / 8.0).ravel(), gap.ravel()]
        )

    def train_cost(self, train_items, seed, patience, max_epochs):
        self._require_seg()
        rng = np.random.default_rng(stable_seed(seed, "cost"))
        xs, ys = [], []
        for item in sorted(train_items, key=lambda it: it["image_id"]):
            mask = item["mask"][:, :, 0].ravel() > 0.5
            xs.append(self._cost_inputs(item["features"])[mask])
            ys.append(item["clicks"][:, :, 0].ravel()[mask].astype(np.float64))
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        if len(y) > SAMPLE_CAP:
            keep = np.sort(rng.choice(len(y), size=SAMPLE_CAP, replace=False))
            x, y = x[keep], y[keep]
        xb = np.column_stack([x, np.ones(len(y))])
        params = np.zeros(xb.shape[1])
        adam = AdamState(params.shape, COST_LEARNING_RATE)

        def do_step(idx):
            nonlocal params
            resid = xb[idx] @ params - y[idx]
            grad = 2.0 * (xb[idx].T @ resid) / len(idx) + L2 * params
            params = adam.update(params, grad)

        def score_fn():
            resid = xb @ params - y
            return -float(np.mean(resid**2)), params.copy()

        outcome, snapshot = _epoch_loop(len(y), rng, do_step, score_fn, patience, max_epochs)
        self.cost_params = snapshot
        return outcome

    def cost_map(self, features: np.ndarray) -> np.ndarray:
        if self.cost_params is None:
            raise RuntimeError("cost model not trained")
        xb = np.column_stack(
            [self._cost_inputs(features), np.ones(features.shape[0] * features.shape[1])]
        )
        h, w, _ = features.shape
        return np.maximum(xb @ self.cost_params, 0.0).reshape(h, w)
