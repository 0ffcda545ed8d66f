"""Built-in reference learner.

Segmentation: pixelwise multinomial logistic regression over the image's
feature planes plus two normalized coordinate planes, trained with masked
cross-entropy. Cost: pixelwise linear regression over the same inputs plus a
predicted-class-boundary-density channel, trained with masked MSE. Both use
seeded mini-batch Adam (or plain SGD), early stopping on a validation score
with the configured patience, and keep the best snapshot.

Committee members are stochastic forward passes with input-channel dropout;
member seeds derive from (training seed, image id, member index).
"""

from __future__ import annotations

import logging
import zlib

import numpy as np

from ..dataset import Dataset, ImageRecord
from ..errors import StateError
from ..geometry import UNLABELED
from ..info_measures import CommitteePrediction, ProbabilityMap
from ..metrics import compute_miou
from ..pool import PoolState
from .base import KIND_BUILTIN, Learner, LearnerConfig, TrainReport

log = logging.getLogger(__name__)


def derive_seed(*parts) -> int:
    """Stable 32-bit seed from mixed int/str parts."""
    ints = []
    for part in parts:
        if isinstance(part, str):
            ints.append(zlib.crc32(part.encode()))
        else:
            ints.append(int(part) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(ints).generate_state(1)[0])


def pixel_features(record: ImageRecord) -> np.ndarray:
    """(H*W, F+2) float64: feature planes plus normalized row/col planes."""
    h, w = record.height, record.width
    feats = record.features.reshape(h * w, -1).astype(np.float64)
    rows = (np.arange(h, dtype=np.float64) / max(h - 1, 1)).repeat(w)
    cols = np.tile(np.arange(w, dtype=np.float64) / max(w - 1, 1), h)
    return np.column_stack([feats, rows, cols])


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def ce_loss_and_grad(
    params: np.ndarray, x: np.ndarray, y: np.ndarray, l2: float
) -> tuple[float, np.ndarray]:
    """Mean masked cross-entropy + L2; params is ((D+1), C), x carries the
    bias column."""
    probs = softmax(x @ params)
    n = x.shape[0]
    eps = 1e-12
    loss = -float(np.mean(np.log(probs[np.arange(n), y] + eps)))
    loss += 0.5 * l2 * float(np.sum(params * params))
    delta = probs
    delta[np.arange(n), y] -= 1.0
    grad = x.T @ delta / n + l2 * params
    return loss, grad


def mse_loss_and_grad(
    weights: np.ndarray, x: np.ndarray, y: np.ndarray, l2: float
) -> tuple[float, np.ndarray]:
    """Mean squared error + L2; weights is (D+1,), x carries the bias column."""
    resid = x @ weights - y
    loss = float(np.mean(resid * resid)) + 0.5 * l2 * float(np.sum(weights * weights))
    grad = 2.0 * (x.T @ resid) / x.shape[0] + l2 * weights
    return loss, grad


class _Adam:
    def __init__(self, shape, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class _Sgd:
    def __init__(self, shape, lr):
        self.lr = lr

    def step(self, params, grad):
        return params - self.lr * grad


def boundary_density(pred_labels: np.ndarray) -> np.ndarray:
    """Fraction of 3x3 neighbors (edge-padded) disagreeing with the center."""
    padded = np.pad(pred_labels, 1, mode="edge")
    h, w = pred_labels.shape
    disagree = np.zeros((h, w), dtype=np.float64)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            disagree += padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w] != pred_labels
    return disagree / 8.0


def majority_smooth(labels: np.ndarray, num_classes: int, size: int = 5) -> np.ndarray:
    """Per-pixel majority vote over a size x size window.

    Real class boundaries are thin and survive; per-pixel argmax flicker in
    low-confidence areas gets absorbed, which keeps the boundary-density cost
    channel from mistaking model uncertainty for annotation cost."""
    from scipy.ndimage import uniform_filter

    votes = np.stack(
        [
            uniform_filter((labels == c).astype(np.float64), size=size, mode="nearest")
            for c in range(num_classes)
        ]
    )
    return np.argmax(votes, axis=0)


class BuiltinLearner(Learner):
    kind = KIND_BUILTIN

    def __init__(self, config: LearnerConfig | None = None):
        self.config = config or LearnerConfig()
        self.num_classes: int | None = None
        self.seg_params: np.ndarray | None = None  # (D+1, C)
        self.cost_weights: np.ndarray | None = None  # (D+3,)
        self._committee_seed_base: int = 0
        self._warned_missing: tuple[int, ...] | None = None

    @property
    def trained(self) -> bool:
        return self.seg_params is not None

    @property
    def cost_trained(self) -> bool:
        return self.cost_weights is not None

    # -- training ---------------------------------------------------------

    def _gather_labeled(
        self, dataset: Dataset, pool: PoolState, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray]:
        """Masked gather of labeled pixels across train images (sorted ids),
        subsampled to sample_cap by global index for memory and speed."""
        per_image: list[tuple[str, int]] = []
        total = 0
        for image_id in sorted(pool.labeled_regions):
            count = pool.labeled_pixels(image_id)
            if count:
                per_image.append((image_id, count))
                total += count
        if total == 0:
            raise StateError("empty labeled pool")
        if total > self.config.sample_cap:
            keep = np.sort(rng.choice(total, size=self.config.sample_cap, replace=False))
        else:
            keep = None
        xs, ys = [], []
        offset = 0
        for image_id, count in per_image:
            revealed = pool.revealed_labels[image_id]
            mask = revealed.ravel() != UNLABELED
            x = pixel_features(dataset.image(image_id))[mask]
            y = revealed.ravel()[mask]
            if keep is not None:
                sel = keep[(keep >= offset) & (keep < offset + count)] - offset
                x, y = x[sel], y[sel]
            xs.append(x)
            ys.append(y.astype(np.int64))
            offset += count
        return np.concatenate(xs), np.concatenate(ys)

    def _run_epochs(self, n, rng, step_fn, eval_fn, patience):
        """Shared epoch loop: seeded mini-batches, early stop on eval score
        (higher is better), best snapshot wins."""
        cfg = self.config
        steps = max(1, -(-min(n, cfg.epoch_pixels) // cfg.batch_size))
        best_score, best_snapshot, stale = -np.inf, None, 0
        epochs_run = 0
        converged = False
        for _ in range(cfg.max_epochs):
            epochs_run += 1
            for _ in range(steps):
                idx = rng.integers(0, n, size=min(cfg.batch_size, n))
                step_fn(idx)
            score, snapshot = eval_fn()
            if score > best_score + 1e-12:
                best_score, best_snapshot, stale = score, snapshot, 0
            else:
                stale += 1
                if stale >= patience:
                    converged = True
                    break
        return epochs_run, best_score, best_snapshot, converged

    def train_segmentation(
        self, dataset: Dataset, pool: PoolState, *, seed: int, patience: int | None = None
    ) -> TrainReport:
        cfg = self.config
        patience = cfg.patience if patience is None else patience
        rng = np.random.default_rng(derive_seed(seed, "seg"))
        self.num_classes = dataset.num_classes
        x, y = self._gather_labeled(dataset, pool, rng)
        missing = tuple(sorted(set(range(dataset.num_classes)) - set(np.unique(y).tolist())))
        if missing and missing != self._warned_missing:
            log.warning("labeled pool lacks classes %s; they will degrade", list(missing))
        self._warned_missing = missing
        xb = np.column_stack([x, np.ones(len(x))])
        d1 = xb.shape[1]
        params = np.zeros((d1, dataset.num_classes))
        opt = self._make_opt(params.shape, cfg.learning_rate)

        val_ids = sorted(dataset.val_ids)[: cfg.convergence_val_images]
        val_sets = [
            (np.column_stack([pixel_features(dataset.image(i)), np.ones(dataset.pixels_per_image())]),
             dataset.image(i).gt_labels)
            for i in val_ids
        ]

        def step_fn(idx):
            nonlocal params
            _, grad = ce_loss_and_grad(params, xb[idx], y[idx], cfg.l2)
            params = opt.step(params, grad)

        def eval_fn():
            pairs = [
                (np.argmax(vx @ params, axis=1).reshape(gt.shape), gt)
                for vx, gt in val_sets
            ]
            return compute_miou(pairs, dataset.num_classes), params.copy()

        epochs, best, snapshot, converged = self._run_epochs(
            len(y), rng, step_fn, eval_fn, patience
        )
        self.seg_params = snapshot
        self._committee_seed_base = derive_seed(seed, "committee")
        return TrainReport(epochs_run=epochs, best_val_miou=float(best), converged=converged)

    def train_cost(
        self, targets, dataset: Dataset, *, seed: int, patience: int | None = None
    ) -> TrainReport:
        if not self.trained:
            raise StateError("cost model needs the segmentation model first (boundary channel)")
        cfg = self.config
        patience = cfg.patience if patience is None else patience
        rng = np.random.default_rng(derive_seed(seed, "cost"))
        xs, ys = [], []
        for image_id, clicks, mask in sorted(targets, key=lambda t: t[0]):
            record = dataset.image(image_id)
            flat_mask = mask.ravel()
            xs.append(self._cost_features(record)[flat_mask])
            ys.append(clicks.ravel()[flat_mask].astype(np.float64))
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        if len(y) > cfg.sample_cap:
            keep = np.sort(rng.choice(len(y), size=cfg.sample_cap, replace=False))
            x, y = x[keep], y[keep]
        xb = np.column_stack([x, np.ones(len(x))])
        weights = np.zeros(xb.shape[1])
        opt = self._make_opt(weights.shape, cfg.cost_learning_rate)

        def step_fn(idx):
            nonlocal weights
            _, grad = mse_loss_and_grad(weights, xb[idx], y[idx], cfg.l2)
            weights = opt.step(weights, grad)

        def eval_fn():
            loss, _ = mse_loss_and_grad(weights, xb, y, cfg.l2)
            return -loss, weights.copy()

        epochs, best, snapshot, converged = self._run_epochs(
            len(y), rng, step_fn, eval_fn, patience
        )
        self.cost_weights = snapshot
        return TrainReport(epochs_run=epochs, best_val_miou=float(-best), converged=converged)

    def _make_opt(self, shape, lr):
        if self.config.optimizer == "sgd":
            return _Sgd(shape, lr)
        return _Adam(shape, lr)

    # -- prediction -------------------------------------------------------

    def _require_trained(self):
        if not self.trained:
            raise StateError("segmentation model is untrained")

    def _forward_probs(self, record: ImageRecord, x: np.ndarray) -> ProbabilityMap:
        xb = np.column_stack([x, np.ones(len(x))])
        probs = softmax(xb @ self.seg_params)
        chw = probs.reshape(record.height, record.width, -1).transpose(2, 0, 1)
        return ProbabilityMap(image_id=record.image_id, values=chw)

    def predict_probs(self, record: ImageRecord) -> ProbabilityMap:
        self._require_trained()
        return self._forward_probs(record, pixel_features(record))

    def predict_committee(
        self, record: ImageRecord, n_members: int | None = None
    ) -> CommitteePrediction:
        self._require_trained()
        n = n_members or self.config.committee_members
        if n < 2:
            raise StateError(f"committee needs >= 2 members, got {n}")
        p = self.config.dropout_rate
        x = pixel_features(record)
        members = []
        for member in range(n):
            rng = np.random.default_rng(
                derive_seed(self._committee_seed_base, record.image_id, member)
            )
            if p > 0:
                keep = rng.random(x.shape[1]) >= p
                dropped = x * (keep / max(1.0 - p, 1e-9))
            else:
                dropped = x
            members.append(self._forward_probs(record, dropped))
        return CommitteePrediction(members=members)

    def predict_seg_labels(self, record: ImageRecord) -> np.ndarray:
        self._require_trained()
        xb = np.column_stack([pixel_features(record), np.ones(record.height * record.width)])
        return np.argmax(xb @ self.seg_params, axis=1).reshape(record.height, record.width)

    def _cost_features(self, record: ImageRecord) -> np.ndarray:
        # Inputs beyond the raw planes: predicted-class-boundary density (from
        # majority-smoothed labels), and the sharp-vs-blurred channel gap, a
        # model-free cell-density proxy that stays reliable where the
        # segmentation model is still wrong.
        base = pixel_features(record)
        labels = majority_smooth(self.predict_seg_labels(record), int(self.num_classes))
        density = boundary_density(labels).ravel()
        mixing = np.abs(
            record.features[:, :, 0].astype(np.float64)
            - record.features[:, :, -1].astype(np.float64)
        ).ravel()
        return np.column_stack([base, density, mixing])

    def predict_cost(self, record: ImageRecord) -> np.ndarray:
        if not self.cost_trained:
            raise StateError("cost model is untrained")
        xb = np.column_stack(
            [self._cost_features(record), np.ones(record.height * record.width)]
        )
        pred = xb @ self.cost_weights
        return np.maximum(pred, 0.0).reshape(record.height, record.width)
