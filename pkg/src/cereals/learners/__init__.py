from .base import KIND_BUILTIN, KIND_EXTERNAL, Learner, LearnerConfig, TrainReport
from .builtin import BuiltinLearner, derive_seed
from .external import ExternalLearner

__all__ = [
    "KIND_BUILTIN",
    "KIND_EXTERNAL",
    "Learner",
    "LearnerConfig",
    "TrainReport",
    "BuiltinLearner",
    "ExternalLearner",
    "derive_seed",
    "make_learner",
]


def make_learner(config: LearnerConfig, workdir=None) -> Learner:
    if config.kind == KIND_BUILTIN:
        return BuiltinLearner(config)
    if config.kind == KIND_EXTERNAL:
        if workdir is None:
            raise ValueError("external learner needs a workdir")
        return ExternalLearner(config, workdir)
    raise ValueError(f"unknown learner kind {config.kind!r}")
