"""Per-pixel information maps from posterior class distributions.

Two measures: Shannon entropy of a single posterior, and vote entropy of a
committee's argmax votes. Natural log throughout; the base only rescales
values by a constant and is neutralized by the corpus-wide normalization in
the region engine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

PROB_SUM_TOL = 1e-5


@dataclass
class ProbabilityMap:
    image_id: str
    values: np.ndarray  # (C, H, W), per-pixel distribution over classes

    def validate(self) -> None:
        v = self.values
        if v.ndim != 3:
            raise DataError(f"probability map must be (C, H, W), got {v.shape}")
        if np.any(np.isnan(v)) or np.any(v < 0):
            raise DataError("probability map has NaN or negative entries")
        sums = v.sum(axis=0)
        if np.any(np.abs(sums - 1.0) > PROB_SUM_TOL):
            worst = float(np.max(np.abs(sums - 1.0)))
            raise DataError(f"per-pixel probabilities must sum to 1 (max dev {worst:.2e})")


@dataclass
class CommitteePrediction:
    members: list[ProbabilityMap]

    def validate(self) -> None:
        if len(self.members) < 2:
            raise DataError("committee needs at least 2 members")
        shape = self.members[0].values.shape
        for m in self.members[1:]:
            if m.values.shape != shape:
                raise DataError("committee member dimensions mismatch")


def _plogp(p: np.ndarray) -> np.ndarray:
    # 0 * log 0 := 0
    out = np.zeros_like(p, dtype=np.float64)
    nz = p > 0
    out[nz] = p[nz] * np.log(p[nz])
    return out


def entropy_map(probs: ProbabilityMap) -> np.ndarray:
    """H = -sum_c P_c * ln(P_c), shape (H, W), clamped at 0."""
    probs.validate()
    h = -_plogp(probs.values.astype(np.float64)).sum(axis=0)
    return np.maximum(h, 0.0)


def argmax_tiebreak(distribution: np.ndarray) -> int:
    """Lowest class index among the maxima of a 1-D distribution."""
    d = np.asarray(distribution)
    if d.ndim != 1 or d.size == 0:
        raise DataError("argmax_tiebreak expects a non-empty 1-D distribution")
    return int(np.argmax(d))


def vote_map(probs: ProbabilityMap) -> np.ndarray:
    """Per-pixel argmax class (lowest index on ties), shape (H, W)."""
    return np.argmax(probs.values, axis=0)


def vote_entropy_map(committee: CommitteePrediction) -> np.ndarray:
    """Disagreement entropy of the committee's argmax votes, shape (H, W)."""
    committee.validate()
    n_members = len(committee.members)
    num_classes = committee.members[0].values.shape[0]
    _, height, width = committee.members[0].values.shape
    counts = np.zeros((num_classes, height, width), dtype=np.int32)
    rows, cols = np.indices((height, width), sparse=True)
    for member in committee.members:
        member.validate()
        votes = vote_map(member)
        counts[votes, rows, cols] += 1
    freq = counts.astype(np.float64) / n_members
    v = -_plogp(freq).sum(axis=0)
    return np.maximum(v, 0.0)
