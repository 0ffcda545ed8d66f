"""Learner contract shared by the builtin model and external workers.

A learner handle owns two models: the segmentation model (probabilistic,
committee-capable) and the click-cost regressor. Both are retrained from
scratch every round with masked supervision; prediction is only legal after
training.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field

from ..dataset import Dataset, ImageRecord
from ..info_measures import CommitteePrediction, ProbabilityMap
from ..pool import PoolState

KIND_BUILTIN = "BUILTIN"
KIND_EXTERNAL = "EXTERNAL"


@dataclass
class TrainReport:
    epochs_run: int
    best_val_miou: float
    converged: bool


@dataclass
class LearnerConfig:
    kind: str = KIND_BUILTIN
    dropout_rate: float = 0.25
    committee_members: int = 8
    learning_rate: float = 0.1
    cost_learning_rate: float = 0.05
    batch_size: int = 4096
    max_epochs: int = 200
    patience: int = 10
    l2: float = 1e-6
    sample_cap: int = 300_000  # labeled-pixel subsample ceiling per training run
    epoch_pixels: int = 40_000  # pixels visited per epoch
    convergence_val_images: int = 8  # val-split prefix used for early stopping
    optimizer: str = "adam"
    worker_cmd: list[str] = field(default_factory=list)  # EXTERNAL only

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "dropout_rate": self.dropout_rate,
            "committee_members": self.committee_members,
            "learning_rate": self.learning_rate,
            "cost_learning_rate": self.cost_learning_rate,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "l2": self.l2,
            "sample_cap": self.sample_cap,
            "epoch_pixels": self.epoch_pixels,
            "convergence_val_images": self.convergence_val_images,
            "optimizer": self.optimizer,
            "worker_cmd": list(self.worker_cmd),
        }


class Learner(abc.ABC):
    """Train-from-scratch, masked-supervision learner handle."""

    kind: str

    @property
    @abc.abstractmethod
    def trained(self) -> bool: ...

    @property
    @abc.abstractmethod
    def cost_trained(self) -> bool: ...

    @abc.abstractmethod
    def train_segmentation(
        self, dataset: Dataset, pool: PoolState, *, seed: int, patience: int | None = None
    ) -> TrainReport: ...

    @abc.abstractmethod
    def predict_probs(self, record: ImageRecord) -> ProbabilityMap: ...

    @abc.abstractmethod
    def predict_committee(
        self, record: ImageRecord, n_members: int | None = None
    ) -> CommitteePrediction: ...

    @abc.abstractmethod
    def train_cost(
        self, targets, dataset: Dataset, *, seed: int, patience: int | None = None
    ) -> TrainReport: ...

    @abc.abstractmethod
    def predict_cost(self, record: ImageRecord): ...

    def close(self) -> None:  # noqa: B027 - optional hook
        pass
