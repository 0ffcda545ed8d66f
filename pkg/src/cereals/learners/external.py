"""External learner worker: JSON-lines over stdio, tensors as .dmt files.

The driver spawns `worker_cmd --workdir DIR` and exchanges one JSON object
per line. The worker announces itself with a ready line, then answers every
request exactly once; see docs/protocol.md for the full schema and a
transcript. Worker stderr goes to a log file whose tail is surfaced on
failure.
"""

from __future__ import annotations

import json
import select
import subprocess
from pathlib import Path

import numpy as np

from ..dataset import Dataset, ImageRecord, image_dir
from ..dmt import read_dmt, write_dmt
from ..errors import LearnerError, StateError
from ..info_measures import CommitteePrediction, ProbabilityMap
from ..pool import PoolState, label_mask
from .base import KIND_EXTERNAL, Learner, LearnerConfig, TrainReport

PROTOCOL_VERSION = 1
RESPONSE_TIMEOUT_S = 600.0


class ExternalLearner(Learner):
    kind = KIND_EXTERNAL

    def __init__(self, config: LearnerConfig, workdir: str | Path, timeout_s: float = RESPONSE_TIMEOUT_S):
        if not config.worker_cmd:
            raise StateError("external learner requires worker_cmd")
        self.config = config
        self.timeout_s = timeout_s
        self.workdir = Path(workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)
        self._proc: subprocess.Popen | None = None
        self._stderr_path = self.workdir / "worker_stderr.log"
        self._next_id = 0
        self._trained = False
        self._cost_trained = False
        self._train_counter = 0

    # -- process / wire management -----------------------------------------

    def _ensure_proc(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            cmd = list(self.config.worker_cmd) + ["--workdir", str(self.workdir)]
            self._proc = subprocess.Popen(
                cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=open(self._stderr_path, "ab"),
                text=True,
                bufsize=1,
            )
            ready = self._read_line()
            if ready.get("status") != "ready":
                raise self._protocol_error(f"worker did not announce ready: {ready}")
            if ready.get("protocol") != PROTOCOL_VERSION:
                raise self._protocol_error(f"protocol mismatch: {ready}")
        return self._proc

    def _read_line(self) -> dict:
        proc = self._proc
        assert proc is not None and proc.stdout is not None
        readable, _, _ = select.select([proc.stdout], [], [], self.timeout_s)
        if not readable:
            raise self._protocol_error("worker response timed out")
        line = proc.stdout.readline()
        if not line:
            raise self._protocol_error("worker closed stdout")
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise self._protocol_error(f"bad JSON from worker: {line!r}") from exc

    def _request(self, payload: dict) -> dict:
        proc = self._ensure_proc()
        self._next_id += 1
        payload = {"id": self._next_id, **payload}
        assert proc.stdin is not None
        try:
            proc.stdin.write(json.dumps(payload) + "\n")
            proc.stdin.flush()
        except BrokenPipeError as exc:
            raise self._protocol_error("worker stdin closed") from exc
        response = self._read_line()
        if response.get("id") != self._next_id:
            raise self._protocol_error(f"response id mismatch: {response}")
        if response.get("status") != "ok":
            raise self._protocol_error(f"worker error response: {response}")
        return response

    def _protocol_error(self, message: str) -> LearnerError:
        tail = ""
        try:
            text = self._stderr_path.read_text()
            tail = text[-2000:]
        except OSError:
            pass
        return LearnerError(f"{message}\n--- worker stderr tail ---\n{tail}")

    def close(self) -> None:
        if self._proc is not None:
            try:
                if self._proc.stdin:
                    self._proc.stdin.close()
                self._proc.wait(timeout=10)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()
            self._proc = None

    # -- contract ------------------------------------------------------------

    @property
    def trained(self) -> bool:
        return self._trained

    @property
    def cost_trained(self) -> bool:
        return self._cost_trained

    def _round_dir(self) -> Path:
        d = self.workdir / f"train_{self._train_counter:04d}"
        d.mkdir(parents=True, exist_ok=True)
        return d

    def train_segmentation(
        self, dataset: Dataset, pool: PoolState, *, seed: int, patience: int | None = None
    ) -> TrainReport:
        self._train_counter += 1
        round_dir = self._round_dir()
        train_entries = []
        for image_id in sorted(pool.labeled_regions):
            if pool.labeled_pixels(image_id) == 0:
                continue
            revealed = pool.revealed_labels[image_id]
            mask = label_mask(pool, dataset, image_id)
            labels_path = round_dir / f"{image_id}_labels.dmt"
            mask_path = round_dir / f"{image_id}_mask.dmt"
            write_dmt(labels_path, revealed.astype(np.float32))
            write_dmt(mask_path, mask.astype(np.float32))
            train_entries.append(
                {
                    "image_id": image_id,
                    "features": str(image_dir(dataset.root, image_id) / "features.dmt"),
                    "labels": str(labels_path),
                    "mask": str(mask_path),
                }
            )
        if not train_entries:
            raise StateError("empty labeled pool")
        val_entries = [
            {
                "image_id": image_id,
                "features": str(image_dir(dataset.root, image_id) / "features.dmt"),
                "labels": str(image_dir(dataset.root, image_id) / "labels.dmt"),
            }
            for image_id in sorted(dataset.val_ids)[: self.config.convergence_val_images]
        ]
        response = self._request(
            {
                "cmd": "train_seg",
                "classes": dataset.num_classes,
                "seed": seed,
                "patience": self.config.patience if patience is None else patience,
                "max_epochs": self.config.max_epochs,
                "dropout": self.config.dropout_rate,
                "train": train_entries,
                "val": val_entries,
            }
        )
        self._trained = True
        return TrainReport(
            epochs_run=int(response["epochs_run"]),
            best_val_miou=float(response["best_val_miou"]),
            converged=bool(response["converged"]),
        )

    def predict_probs(self, record: ImageRecord) -> ProbabilityMap:
        if not self._trained:
            raise StateError("segmentation model is untrained")
        out = self.workdir / "out" / f"{record.image_id}_probs.dmt"
        out.parent.mkdir(exist_ok=True)
        response = self._request(
            {
                "cmd": "predict_probs",
                "image_id": record.image_id,
                "features": str(self._features_path(record)),
                "out": str(out),
            }
        )
        values = read_dmt(response["out"]).astype(np.float64).transpose(2, 0, 1)
        pm = ProbabilityMap(image_id=record.image_id, values=values)
        pm.validate()
        return pm

    def predict_committee(
        self, record: ImageRecord, n_members: int | None = None
    ) -> CommitteePrediction:
        if not self._trained:
            raise StateError("segmentation model is untrained")
        n = n_members or self.config.committee_members
        out_dir = self.workdir / "out" / f"{record.image_id}_committee"
        out_dir.mkdir(parents=True, exist_ok=True)
        response = self._request(
            {
                "cmd": "predict_committee",
                "image_id": record.image_id,
                "features": str(self._features_path(record)),
                "n_members": n,
                "out_dir": str(out_dir),
            }
        )
        members = []
        for path in response["outs"]:
            values = read_dmt(path).astype(np.float64).transpose(2, 0, 1)
            members.append(ProbabilityMap(image_id=record.image_id, values=values))
        return CommitteePrediction(members=members)

    def train_cost(
        self, targets, dataset: Dataset, *, seed: int, patience: int | None = None
    ) -> TrainReport:
        round_dir = self._round_dir()
        entries = []
        for image_id, clicks, mask in sorted(targets, key=lambda t: t[0]):
            clicks_path = round_dir / f"{image_id}_clicks.dmt"
            mask_path = round_dir / f"{image_id}_mask.dmt"
            write_dmt(clicks_path, clicks.astype(np.float32))
            if not mask_path.exists():
                write_dmt(mask_path, mask.astype(np.float32))
            entries.append(
                {
                    "image_id": image_id,
                    "features": str(image_dir(dataset.root, image_id) / "features.dmt"),
                    "clicks": str(clicks_path),
                    "mask": str(mask_path),
                }
            )
        response = self._request(
            {
                "cmd": "train_cost",
                "seed": seed,
                "patience": self.config.patience if patience is None else patience,
                "max_epochs": self.config.max_epochs,
                "train": entries,
            }
        )
        self._cost_trained = True
        return TrainReport(
            epochs_run=int(response["epochs_run"]),
            best_val_miou=float(response["best_val_miou"]),
            converged=bool(response["converged"]),
        )

    def predict_cost(self, record: ImageRecord) -> np.ndarray:
        if not self._cost_trained:
            raise StateError("cost model is untrained")
        out = self.workdir / "out" / f"{record.image_id}_cost.dmt"
        out.parent.mkdir(exist_ok=True)
        response = self._request(
            {
                "cmd": "predict_cost",
                "image_id": record.image_id,
                "features": str(self._features_path(record)),
                "out": str(out),
            }
        )
        values = read_dmt(response["out"])[:, :, 0].astype(np.float64)
        if values.shape != (record.height, record.width) or np.any(values < 0):
            raise self._protocol_error(f"invalid cost map for {record.image_id}")
        return values

    def _features_path(self, record: ImageRecord) -> Path:
        if getattr(record, "features_path", None):
            return Path(record.features_path)
        raise StateError(f"{record.image_id} has no on-disk features for the external worker")
