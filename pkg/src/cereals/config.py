"""Experiment configuration: one self-describing JSON document.

Every field has a default; unknown keys are rejected so typos fail loudly.
The effective config is echoed into the results directory for provenance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .acquisition import AcquisitionConfig
from .cost import COST_MODE_ORACLE, COST_MODES
from .errors import ConfigError
from .learners.base import LearnerConfig
from .region_engine import FusionConfig
from .synthetic import DatasetSpec


@dataclass
class DumpConfig:
    info_maps_dir: str | None = None
    cost_maps_dir: str | None = None
    region_maps_dir: str | None = None

    def to_json(self) -> dict:
        return {
            "info_maps_dir": self.info_maps_dir,
            "cost_maps_dir": self.cost_maps_dir,
            "region_maps_dir": self.region_maps_dir,
        }


@dataclass
class ExperimentConfig:
    dataset_dir: str = "dataset"
    results_dir: str = "results"
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    cost_mode: str = COST_MODE_ORACLE
    seed_images: int = 4  # n
    repetitions: int = 5
    max_rounds: int = 40
    rng_seed: int = 0
    stop_at_target: bool = False  # end a repetition once 95% of p100 is reached
    parallel_reps: int = 0  # 0 -> auto (cpu count, capped)
    dump: DumpConfig = field(default_factory=DumpConfig)
    plot: bool = False

    def validate(self) -> None:
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.max_rounds < 0:
            raise ConfigError("max_rounds must be >= 0")
        if self.seed_images < 1:
            raise ConfigError("seed_images must be >= 1")
        if self.cost_mode not in COST_MODES:
            raise ConfigError(f"cost_mode must be one of {COST_MODES}")

    def to_json(self) -> dict:
        acq = self.acquisition
        return {
            "dataset_dir": self.dataset_dir,
            "results_dir": self.results_dir,
            "acquisition": {
                "strategy": acq.strategy,
                "measure": acq.measure,
                "fusion": {"kind": acq.fusion.kind, "alpha": acq.fusion.alpha},
                "region_size": acq.region_size,
                "m": acq.m,
            },
            "learner": self.learner.to_json(),
            "cost_mode": self.cost_mode,
            "seed_images": self.seed_images,
            "repetitions": self.repetitions,
            "max_rounds": self.max_rounds,
            "rng_seed": self.rng_seed,
            "stop_at_target": self.stop_at_target,
            "parallel_reps": self.parallel_reps,
            "dump": self.dump.to_json(),
            "plot": self.plot,
        }


def _check_keys(data: dict, allowed: set[str], where: str) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def experiment_config_from_json(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    defaults = ExperimentConfig()
    _check_keys(data, set(defaults.to_json()), "config")
    try:
        acq_data = dict(data.get("acquisition", {}))
        _check_keys(acq_data, {"strategy", "measure", "fusion", "region_size", "m"}, "acquisition")
        fusion_data = dict(acq_data.pop("fusion", {}))
        _check_keys(fusion_data, {"kind", "alpha"}, "fusion")
        fusion = FusionConfig(
            kind=fusion_data.get("kind", "INFO_ONLY"),
            alpha=fusion_data.get("alpha"),
        )
        acquisition = AcquisitionConfig(fusion=fusion, **acq_data)
        learner_data = dict(data.get("learner", {}))
        _check_keys(learner_data, set(LearnerConfig().to_json()), "learner")
        learner = LearnerConfig(**learner_data)
        dump_data = dict(data.get("dump", {}))
        _check_keys(dump_data, set(DumpConfig().to_json()), "dump")
        config = ExperimentConfig(
            dataset_dir=data.get("dataset_dir", defaults.dataset_dir),
            results_dir=data.get("results_dir", defaults.results_dir),
            acquisition=acquisition,
            learner=learner,
            cost_mode=data.get("cost_mode", defaults.cost_mode),
            seed_images=int(data.get("seed_images", defaults.seed_images)),
            repetitions=int(data.get("repetitions", defaults.repetitions)),
            max_rounds=int(data.get("max_rounds", defaults.max_rounds)),
            rng_seed=int(data.get("rng_seed", defaults.rng_seed)),
            stop_at_target=bool(data.get("stop_at_target", defaults.stop_at_target)),
            parallel_reps=int(data.get("parallel_reps", defaults.parallel_reps)),
            dump=DumpConfig(**dump_data),
            plot=bool(data.get("plot", defaults.plot)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config: {exc}") from exc
    config.validate()
    return config


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return experiment_config_from_json(data)


def dataset_spec_from_json(data: dict) -> DatasetSpec:
    if not isinstance(data, dict):
        raise ConfigError("dataset spec must be a JSON object")
    _check_keys(data, set(DatasetSpec().to_json()), "dataset spec")
    try:
        spec = DatasetSpec(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad dataset spec: {exc}") from exc
    spec.validate()
    return spec
