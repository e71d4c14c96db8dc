"""DPP kernel ``L = diag(q) (alpha*S + (1-alpha)*I) diag(q)``.

Diagonal entries are ``q_i**2`` and off-diagonal entries ``alpha*q_i*q_j*S_ij``.
The serving path only ever asks for single rows (:func:`kernel_row`); the
dense builder exists for oracles, tests and small offline runs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pdpp.errors import ConfigurationError, NumericError, SizeError
from pdpp.similarity import (
    CandidateSimilarity,
    DenseSimilarityView,
    SimilarityMatrix,
    check_similarity_values,
)

logger = logging.getLogger(__name__)

MIN_SCORE = 1e-6
DENSE_CAP = 2048
_MAX_SCORE = float(np.sqrt(np.finfo(np.float64).max))


def clamp_scores(scores, floor: float = MIN_SCORE) -> np.ndarray:
    """Clamp non-positive scores to ``floor`` (q is squared, so its sign carries nothing)."""
    q = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        bad = int(np.flatnonzero(~np.isfinite(q))[0])
        raise NumericError(f"non-finite relevance score at candidate {bad}")
    low = q <= 0
    if low.any():
        logger.warning("clamping %d non-positive relevance score(s) to %g", int(low.sum()), floor)
        q = np.where(low, floor, q)
    return q


@dataclass(frozen=True)
class KernelSpec:
    """Relevance scores, candidate similarity and trade-off that define L lazily."""

    ids: tuple
    q: np.ndarray
    similarity: CandidateSimilarity
    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if len(self.ids) != len(self.q):
            raise ConfigurationError("ids and scores differ in length")
        if self.similarity.size != len(self.q):
            raise ConfigurationError("similarity view does not match candidate count")
        # |L_ij| <= q_i * q_j when S is in [0, 1], so a finite max(q)**2 bounds every entry
        if len(self.q) and float(np.max(self.q)) > _MAX_SCORE:
            i = int(np.argmax(self.q))
            raise NumericError(f"kernel entry for pair ({self.ids[i]!r}, {self.ids[i]!r}) overflows")

    @classmethod
    def create(cls, ids: Sequence, scores, similarity, alpha: float) -> "KernelSpec":
        """Build a spec, clamping scores and adapting ``similarity``.

        ``similarity`` may be a :class:`SimilarityMatrix` (looked up by id), a
        candidate-aligned square array, or a ready :class:`CandidateSimilarity`.
        """
        ids = tuple(ids)
        q = clamp_scores(scores)
        if isinstance(similarity, SimilarityMatrix):
            view = similarity.view(ids)
        elif isinstance(similarity, CandidateSimilarity):
            view = similarity
        else:
            values = np.asarray(similarity, dtype=np.float64)
            check_similarity_values(values)
            view = DenseSimilarityView(values, np.arange(len(ids)))
        return cls(ids, q, view, float(alpha))

    def __len__(self) -> int:
        return len(self.q)


def kernel_row(spec: KernelSpec, j: int) -> np.ndarray:
    """Row ``j`` of L over all candidates, without materializing L."""
    if not 0 <= j < len(spec.q):
        raise IndexError(f"candidate index {j} out of range")
    q = spec.q
    row = spec.similarity.row(j)
    row *= spec.alpha * (q[j] * q)
    row[j] = q[j] * q[j]
    return row


def kernel_diagonal(spec: KernelSpec) -> np.ndarray:
    return spec.q * spec.q


def build_dense_kernel(spec: KernelSpec, cap: int = DENSE_CAP) -> np.ndarray:
    """Full L as a dense array; refuses more than ``cap`` candidates."""
    n = len(spec.q)
    if n > cap:
        raise SizeError(f"{n} candidates exceeds dense kernel cap {cap}; use kernel_row instead")
    q = spec.q
    L = (spec.alpha * np.outer(q, q)) * spec.similarity.dense()
    L[np.diag_indices(n)] = q * q
    if not np.all(np.isfinite(L)):
        i, j = np.argwhere(~np.isfinite(L))[0]
        raise NumericError(f"non-finite kernel entry for pair ({spec.ids[i]!r}, {spec.ids[j]!r})")
    return L
