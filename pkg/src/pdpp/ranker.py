"""Upstream relevance scorers that produce ``q`` for the re-ranker.

The re-ranker does not care where scores come from; these two exist so the
offline harness has something to re-rank. Item-based CF uses cosine
similarity of binary positive-interaction vectors, keeps the top ``n``
neighbours per item and scores a candidate by summing its weights to the
user's history items.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

import numpy as np
import scipy.sparse as sps

from pdpp.datasets import InteractionDataset
from pdpp.errors import TrainingError
from pdpp.kernel import MIN_SCORE


@dataclass(frozen=True)
class RelevanceScores:
    ids: tuple
    q: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def as_dict(self) -> dict:
        return dict(zip(self.ids, self.q.tolist()))

    def sorted(self) -> list:
        """Ids by descending score, ties by input position."""
        order = np.lexsort((np.arange(len(self.q)), -self.q))
        return [self.ids[i] for i in order]


class Scorer(Protocol):
    def score(self, history: Iterable, candidates: Sequence) -> RelevanceScores: ...


def _incidence(pairs: Iterable[tuple[str, str]], items: dict[str, int]) -> sps.csr_matrix:
    users: dict[str, int] = {}
    rows, cols = [], []
    for u, i in pairs:
        rows.append(items[i])
        cols.append(users.setdefault(u, len(users)))
    m = sps.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(items), max(len(users), 1)))
    m.sum_duplicates()
    m.data[:] = 1.0
    return m


@dataclass(frozen=True)
class ItemCFModel:
    """Top-n cosine neighbour lists stored as a sparse items x items matrix."""

    item_ids: tuple[str, ...]
    weights: sps.csr_matrix
    n: int

    @property
    def index(self) -> dict[str, int]:
        return {i: n for n, i in enumerate(self.item_ids)}

    def neighbors(self, item_id) -> list[tuple[str, float]]:
        idx = self.index.get(str(item_id))
        if idx is None:
            return []
        row = self.weights.getrow(idx)
        order = np.lexsort((row.indices, -row.data))
        return [(self.item_ids[row.indices[o]], float(row.data[o])) for o in order]

    def weight(self, i, j) -> float:
        index = self.index
        a, b = index.get(str(i)), index.get(str(j))
        if a is None or b is None:
            return 0.0
        return float(self.weights[a, b])

    def score(self, history: Iterable, candidates: Sequence) -> RelevanceScores:
        return score_candidates(self, history, candidates)


def cosine_item_similarity(incidence: sps.csr_matrix) -> np.ndarray:
    gram = (incidence @ incidence.T).toarray()
    # sqrt of the product keeps identical vectors at exactly 1
    denom = np.sqrt(np.outer(np.diag(gram), np.diag(gram)))
    sim = np.divide(gram, denom, out=np.zeros_like(gram), where=denom > 0)
    np.clip(sim, 0.0, 1.0, out=sim)
    np.fill_diagonal(sim, 0.0)
    return sim


def fit_item_cf(data: InteractionDataset, n: int = 50, items: Sequence | None = None) -> ItemCFModel:
    """Fit item-item cosine neighbourhoods on positive interactions.

    ``items`` fixes the item universe (default: every item in ``data``); items
    without positives get empty neighbour lists.
    """
    if n < 1:
        raise ValueError("neighbourhood size must be >= 1")
    pos = data.positives()
    if pos.empty:
        raise TrainingError("no positive interactions to train item CF on")
    universe = list(dict.fromkeys(str(i) for i in (items if items is not None else data.frame["item_id"])))
    index = {i: k for k, i in enumerate(universe)}
    pairs = [(u, i) for u, i in zip(pos["user_id"], pos["item_id"]) if i in index]
    sim = cosine_item_similarity(_incidence(pairs, index))

    rows, cols, vals = [], [], []
    keep = min(n, max(len(universe) - 1, 0))
    for r in range(len(universe)):
        row = sim[r]
        if keep == 0:
            break
        top = np.argpartition(-row, keep - 1)[:keep] if keep < len(row) else np.arange(len(row))
        top = top[row[top] > 0]
        rows.extend([r] * len(top))
        cols.extend(top.tolist())
        vals.extend(row[top].tolist())
    weights = sps.csr_matrix((vals, (rows, cols)), shape=(len(universe), len(universe)))
    return ItemCFModel(tuple(universe), weights, n)


def score_candidates(model: ItemCFModel, history: Iterable, candidates: Sequence) -> RelevanceScores:
    """``q_i = sum_j weight(i, j)`` over history items ``j``, floored at ``MIN_SCORE``.

    Candidates that are themselves history items are dropped.
    """
    history = {str(h) for h in history}
    cands = [str(c) for c in candidates if str(c) not in history]
    index = model.index
    hist_idx = [index[h] for h in history if h in index]
    q = np.zeros(len(cands))
    if hist_idx:
        indicator = np.zeros(len(model.item_ids))
        indicator[hist_idx] = 1.0
        all_scores = model.weights @ indicator
        for k, c in enumerate(cands):
            pos = index.get(c)
            if pos is not None:
                q[k] = all_scores[pos]
    return RelevanceScores(tuple(cands), np.maximum(q, MIN_SCORE))


def score_matrix(model: ItemCFModel, history: sps.csr_matrix) -> np.ndarray:
    """Batch scores: ``history`` is users x items (model order); returns users x items."""
    return np.asarray((history @ model.weights.T).todense())


@dataclass(frozen=True)
class PopularityScorer:
    counts: dict[str, int]

    @property
    def max_count(self) -> int:
        return max(self.counts.values(), default=0)

    def score(self, history: Iterable, candidates: Sequence) -> RelevanceScores:
        top = self.max_count
        cands = [str(c) for c in candidates]
        q = np.array([self.counts.get(c, 0) / top if top else 0.0 for c in cands])
        return RelevanceScores(tuple(cands), np.maximum(q, MIN_SCORE))


def fit_popularity(data: InteractionDataset) -> PopularityScorer:
    pos = data.positives()
    counts = pos["item_id"].value_counts()
    return PopularityScorer({str(k): int(v) for k, v in counts.items()})
