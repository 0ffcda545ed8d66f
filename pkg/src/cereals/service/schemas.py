"""Pydantic request/response models for the HTTP service.

These mirror the core dataclass configs field-for-field; requests are
re-validated by the core parsers so the service and the Python API reject
exactly the same inputs.
"""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field


class StrictModel(BaseModel):
    """Requests reject unknown fields, mirroring the core config parsers."""

    model_config = ConfigDict(extra="forbid")


class HealthResponse(BaseModel):
    status: str
    version: str


class DatasetSpecModel(StrictModel):
    train_images: int = 200
    val_images: int = 40
    height: int = 128
    width: int = 128
    num_classes: int = 4
    feature_channels: int = 6
    style_channels: int = 2
    sites_min: int = 8
    sites_max: int = 40
    noise: float = 0.35
    blur_sigma: float = 1.5
    separation: float = 2.0
    class_presence: list[float] = Field(default_factory=lambda: [1.0, 1.0, 0.08, 0.08])
    class_cell_weight: list[float] = Field(default_factory=lambda: [1.0, 1.0, 0.55, 0.55])
    class_drift: list[float] = Field(default_factory=lambda: [0.15, 0.15, 1.6, 1.6])
    seed: int = 0


class GenerateRequest(StrictModel):
    out_dir: str
    spec: DatasetSpecModel = Field(default_factory=DatasetSpecModel)


class GenerateResponse(BaseModel):
    dataset_dir: str
    train_images: int
    val_images: int
    num_classes: int
    total_train_vertices: int


class FusionModel(StrictModel):
    kind: str = "INFO_ONLY"
    alpha: Optional[float] = None


class AcquisitionModel(StrictModel):
    strategy: str = "REGION_SCORE"
    measure: str = "ENTROPY"
    fusion: FusionModel = Field(default_factory=FusionModel)
    region_size: Optional[int] = 32
    m: int = 4


class LearnerModel(StrictModel):
    kind: str = "BUILTIN"
    dropout_rate: float = 0.25
    committee_members: int = 8
    learning_rate: float = 0.1
    cost_learning_rate: float = 0.05
    batch_size: int = 4096
    max_epochs: int = 200
    patience: int = 10
    l2: float = 1e-6
    sample_cap: int = 300_000
    epoch_pixels: int = 40_000
    convergence_val_images: int = 8
    optimizer: str = "adam"
    worker_cmd: list[str] = Field(default_factory=list)


class DumpModel(StrictModel):
    info_maps_dir: Optional[str] = None
    cost_maps_dir: Optional[str] = None
    region_maps_dir: Optional[str] = None


class ExperimentConfigModel(StrictModel):
    dataset_dir: str = "dataset"
    results_dir: str = "results"
    acquisition: AcquisitionModel = Field(default_factory=AcquisitionModel)
    learner: LearnerModel = Field(default_factory=LearnerModel)
    cost_mode: str = "oracle"
    seed_images: int = 4
    repetitions: int = 5
    max_rounds: int = 40
    rng_seed: int = 0
    stop_at_target: bool = False
    parallel_reps: int = 0
    dump: DumpModel = Field(default_factory=DumpModel)
    plot: bool = False


class ExperimentRequest(StrictModel):
    config: ExperimentConfigModel = Field(default_factory=ExperimentConfigModel)


class ReferenceRequest(StrictModel):
    dataset_dir: str
    learner: LearnerModel = Field(default_factory=LearnerModel)
    use_cache: bool = True


class JobCreated(BaseModel):
    job_id: str


class JobStatusResponse(BaseModel):
    job_id: str
    kind: str
    status: str
    progress: dict[str, Any] = Field(default_factory=dict)
    error: Optional[str] = None
    error_code: Optional[str] = None
    result: Optional[dict[str, Any]] = None


class ReportRequest(StrictModel):
    results_dir: str


class ReportResponse(BaseModel):
    summary: dict[str, Any]
    table: str
