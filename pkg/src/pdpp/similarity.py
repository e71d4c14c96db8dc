"""Item-item similarity matrices with entries in [0, 1] and a unit diagonal.

Two constructions are provided: Jaccard overlap of genre sets, and cosine
similarity of binary user-incidence vectors. Both produce Gram-type matrices,
so they are positive semi-definite and safe to plug into a DPP kernel.

For the re-ranking path a full matrix is rarely needed. ``CandidateSimilarity``
views expose one row at a time over an arbitrary candidate list, resolving
unknown ids to zero similarity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sps

from pdpp.errors import ConfigurationError, IngestionError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ItemCatalog:
    """Ordered mapping of item id to its (non-empty) set of genre labels."""

    items: Mapping[str, frozenset[str]]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)
    _genres: tuple[str, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        items = {}
        for item_id, genres in self.items.items():
            genres = frozenset(genres)
            if not genres:
                raise IngestionError(f"item {item_id!r} has no genre labels")
            items[str(item_id)] = genres
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "_index", {i: n for n, i in enumerate(items)})
        vocab = sorted(set().union(*items.values())) if items else []
        object.__setattr__(self, "_genres", tuple(vocab))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[object, Iterable[str]]]) -> "ItemCatalog":
        items: dict[str, frozenset[str]] = {}
        for item_id, genres in pairs:
            key = str(item_id)
            if key in items:
                raise IngestionError(f"duplicate item id {key!r} in catalog")
            items[key] = frozenset(genres)
        return cls(items)

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, item_id) -> bool:
        return str(item_id) in self._index

    @property
    def ids(self) -> list[str]:
        return list(self.items)

    @property
    def genre_vocabulary(self) -> tuple[str, ...]:
        return self._genres

    def genres(self, item_id) -> frozenset[str]:
        return self.items[str(item_id)]

    def position(self, item_id) -> int:
        return self._index[str(item_id)]

    def incidence(self) -> np.ndarray:
        """Dense items x genres 0/1 matrix, rows in catalog order."""
        col = {g: n for n, g in enumerate(self._genres)}
        out = np.zeros((len(self.items), len(self._genres)))
        for r, genres in enumerate(self.items.values()):
            out[r, [col[g] for g in genres]] = 1.0
        return out


@dataclass(frozen=True)
class SimilarityMatrix:
    """Dense symmetric similarity over an ordered item-id index."""

    ids: tuple[str, ...]
    values: np.ndarray
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (len(self.ids), len(self.ids)):
            raise ConfigurationError(
                f"similarity shape {values.shape} does not match {len(self.ids)} ids"
            )
        check_similarity_values(values)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_index", {i: n for n, i in enumerate(self.ids)})

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, item_id) -> bool:
        return str(item_id) in self._index

    def position(self, item_id) -> int:
        return self._index[str(item_id)]

    def lookup(self, a, b) -> float:
        """S_ab, with 0 for unknown ids (and 1 when ``a == b``)."""
        if str(a) == str(b):
            return 1.0
        ia, ib = self._index.get(str(a)), self._index.get(str(b))
        if ia is None or ib is None:
            return 0.0
        return float(self.values[ia, ib])

    def view(self, candidate_ids: Sequence) -> "DenseSimilarityView":
        positions = np.array([self._index.get(str(c), -1) for c in candidate_ids], dtype=np.intp)
        return DenseSimilarityView(self.values, positions, ids=candidate_ids)


def check_similarity_values(values: np.ndarray):
    if not np.all(np.isfinite(values)):
        raise ConfigurationError("similarity matrix has non-finite entries")
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        raise ConfigurationError("similarity entries must lie in [0, 1]")


class CandidateSimilarity:
    """Row access to S restricted to a candidate list.

    Subclasses implement :meth:`row`; :meth:`dense` stacks rows so that dense
    and lazy consumers see bit-identical values.
    """

    size: int
    unknown: np.ndarray

    def row(self, j: int) -> np.ndarray:
        raise NotImplementedError

    def dense(self) -> np.ndarray:
        if self.size == 0:
            return np.zeros((0, 0))
        return np.stack([self.row(j) for j in range(self.size)])

    def _warn_unknown(self, ids: Sequence | None):
        n = int(self.unknown.sum())
        if n:
            sample = [ids[i] for i in np.flatnonzero(self.unknown)[:5]] if ids is not None else []
            logger.warning("%d candidate(s) missing from similarity index, using S=0: %s", n, sample)


class DenseSimilarityView(CandidateSimilarity):
    def __init__(self, values: np.ndarray, positions: np.ndarray, ids: Sequence | None = None):
        self.values = values
        self.positions = np.asarray(positions, dtype=np.intp)
        self.size = len(self.positions)
        self.unknown = self.positions < 0
        self._any_unknown = bool(self.unknown.any())
        self._safe = np.where(self.unknown, 0, self.positions)
        self._warn_unknown(ids)

    def row(self, j: int) -> np.ndarray:
        pj = self.positions[j]
        if pj < 0:
            out = np.zeros(self.size)
        else:
            out = self.values[pj, self._safe]
            if self._any_unknown:
                out[self.unknown] = 0.0
        out[j] = 1.0
        return out


class GenreSimilarityView(CandidateSimilarity):
    """Jaccard similarity of genre sets, computed row by row on demand."""

    def __init__(self, incidence: np.ndarray, ids: Sequence | None = None):
        self.incidence = np.asarray(incidence, dtype=np.float64)
        self.size = self.incidence.shape[0]
        self.sizes = self.incidence.sum(axis=1)
        self.unknown = self.sizes == 0
        self._warn_unknown(ids)

    def row(self, j: int) -> np.ndarray:
        inter = self.incidence @ self.incidence[j]
        union = self.sizes + self.sizes[j] - inter
        out = np.divide(inter, union, out=np.zeros(self.size), where=union > 0)
        out[j] = 1.0
        return out


class GenreIndex:
    """In-memory genre index over a catalog for serving-time similarity lookups."""

    def __init__(self, catalog: ItemCatalog):
        self.catalog = catalog
        self._incidence = catalog.incidence()

    def view(self, candidate_ids: Sequence) -> GenreSimilarityView:
        index = self.catalog._index
        pos = np.fromiter((index.get(str(i), -1) for i in candidate_ids), dtype=np.intp, count=len(candidate_ids))
        rows = self._incidence[np.maximum(pos, 0)] if len(pos) else np.zeros((0, self._incidence.shape[1]))
        rows[pos < 0] = 0.0
        return GenreSimilarityView(rows, ids=candidate_ids)


def _jaccard(incidence: np.ndarray) -> np.ndarray:
    inter = incidence @ incidence.T
    sizes = np.diag(inter)
    union = sizes[:, None] + sizes[None, :] - inter
    out = np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
    np.fill_diagonal(out, 1.0)
    return out


def build_genre_similarity(catalog: ItemCatalog) -> SimilarityMatrix:
    """Jaccard similarity of genre sets; the 0/1 same-genre indicator for single-genre items."""
    if len(catalog) == 0:
        raise ConfigurationError("cannot build similarity for an empty catalog")
    return SimilarityMatrix(tuple(catalog.ids), _jaccard(catalog.incidence()))


def build_interaction_similarity(interactions: Iterable[tuple[object, object]]) -> SimilarityMatrix:
    """Cosine similarity of binary user-incidence vectors.

    Repeated (user, item) pairs count once. Item order follows first appearance.
    """
    users: dict[str, int] = {}
    items: dict[str, int] = {}
    rows, cols = [], []
    for user_id, item_id in interactions:
        u = users.setdefault(str(user_id), len(users))
        i = items.setdefault(str(item_id), len(items))
        rows.append(i)
        cols.append(u)
    if not items:
        raise ConfigurationError("no interactions given")
    incidence = sps.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(len(items), len(users))
    )
    incidence.sum_duplicates()
    incidence.data[:] = 1.0
    gram = (incidence @ incidence.T).toarray()
    # sqrt of the product keeps identical vectors at exactly 1
    denom = np.sqrt(np.outer(np.diag(gram), np.diag(gram)))
    values = np.divide(gram, denom, out=np.zeros_like(gram), where=denom > 0)
    values = np.clip(values, 0.0, 1.0)
    np.fill_diagonal(values, 1.0)
    return SimilarityMatrix(tuple(items), values)
