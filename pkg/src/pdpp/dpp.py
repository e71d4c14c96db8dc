"""Greedy MAP inference for DPP re-ranking, plus two reference solvers.

``fast_greedy_map`` is the production path: an incremental Cholesky scheme
that keeps, for every candidate ``i``, the squared residual norm ``d_i**2``
of its kernel feature after projecting out the already selected items. The
log of that residual is exactly the marginal gain
``log det(L[Y+i]) - log det(L[Y])``, so each round is an argmax over ``d**2``
followed by an O(M * |Y|) update. Over k rounds that is O(k**2 * M).

``naive_greedy_map`` recomputes every determinant from scratch and
``exhaustive_map`` enumerates all subsets; both exist to check the fast path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from pdpp.errors import NumericError
from pdpp.kernel import KernelSpec, kernel_diagonal, kernel_row

#: Residual d_i**2 below which the kernel is treated as exhausted.
EPS_D = 1e-10
#: Relative band within which two candidates' gains count as tied.
TIE_RTOL = 1e-9

EXHAUSTIVE_MAX_ITEMS = 15
EXHAUSTIVE_MAX_K = 5
NAIVE_MAX_ITEMS = 2048


@dataclass(frozen=True)
class Selection:
    """Ordered re-ranked list.

    ``gains`` holds one log-det marginal gain per greedy step; the trailing
    ``fallback_fill`` items were appended by relevance after the kernel ran
    out of rank and have no gain.
    """

    items: tuple
    indices: tuple[int, ...]
    gains: tuple[float, ...]
    fallback_fill: int = 0

    def __len__(self) -> int:
        return len(self.items)


def _validate(k: int, n: int):
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    if n == 0:
        raise ValueError("no candidates to select from")


def _pick(score: np.ndarray, q: np.ndarray) -> int:
    """Argmax of ``score`` (unavailable entries hold -inf); ties go to higher q, then lower index."""
    j = int(score.argmax())
    best = score[j]
    tied = score >= best - TIE_RTOL * abs(best)
    if np.count_nonzero(tied) == 1:
        return j
    idx = np.flatnonzero(tied)
    return int(idx[np.argmax(q[idx])])


def _relevance_order(q: np.ndarray, available: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(available)
    # lexsort: last key is primary; stable so lower index wins ties
    return idx[np.lexsort((idx, -q[idx]))]


def _finish(ids, q, chosen, gains, k) -> Selection:
    fill = []
    if len(chosen) < k:
        available = np.ones(len(q), dtype=bool)
        available[chosen] = False
        fill = _relevance_order(q, available)[: k - len(chosen)].tolist()
    order = list(chosen) + fill
    return Selection(
        items=tuple(ids[i] for i in order),
        indices=tuple(int(i) for i in order),
        gains=tuple(gains),
        fallback_fill=len(fill),
    )


def fast_greedy_map(spec: KernelSpec, k: int, eps: float = EPS_D) -> Selection:
    """Select ``min(k, M)`` items greedily maximizing log det of the kernel submatrix.

    Only the diagonal of L and the rows of the selected items are ever
    computed. When every remaining residual drops below ``eps`` the rest of the
    list is filled by descending relevance.
    """
    n = len(spec.q)
    _validate(k, n)
    k = min(int(k), n)
    q = spec.q
    d2 = kernel_diagonal(spec).copy()  # selected entries are parked at -inf
    coeffs = np.empty((k, n))
    chosen: list[int] = []
    gains: list[float] = []

    while len(chosen) < k:
        j = _pick(d2, q)
        dj2 = d2[j]
        if dj2 < eps:
            break
        chosen.append(j)
        gains.append(math.log(dj2))
        t = len(chosen) - 1
        if t + 1 == k:
            break
        e = kernel_row(spec, j)
        if t:
            e -= coeffs[:t, j] @ coeffs[:t]
        e /= math.sqrt(dj2)
        coeffs[t] = e
        d2 -= e * e
        d2[j] = -np.inf

    return _finish(spec.ids, q, chosen, gains, k)


def naive_greedy_map(L: np.ndarray, k: int, ids=None, eps: float = EPS_D) -> Selection:
    """Greedy MAP by direct determinant evaluation each round.

    Same tie-breaking and exhaustion policy as :func:`fast_greedy_map`, with
    relevance recovered as ``sqrt(diag(L))``.
    """
    L = np.asarray(L, dtype=np.float64)
    n = L.shape[0]
    _validate(k, n)
    if n > NAIVE_MAX_ITEMS:
        raise ValueError(f"naive solver limited to {NAIVE_MAX_ITEMS} items, got {n}")
    if not np.allclose(L, L.T, rtol=0, atol=1e-12):
        raise NumericError("kernel is not symmetric")
    k = min(int(k), n)
    ids = tuple(range(n)) if ids is None else tuple(ids)
    diag = np.diag(L).copy()
    if np.any(diag < -1e-8):
        raise NumericError(f"negative kernel diagonal at item {int(np.argmin(diag))}")
    q = np.sqrt(np.clip(diag, 0.0, None))
    available = np.ones(n, dtype=bool)
    chosen: list[int] = []
    gains: list[float] = []
    logdet_y = 0.0

    while len(chosen) < k:
        cand = np.flatnonzero(available)
        idx = np.column_stack([np.tile(chosen, (len(cand), 1)), cand]).astype(np.intp)
        subs = L[idx[:, :, None], idx[:, None, :]]
        sign, logabs = np.linalg.slogdet(subs)
        ratio = np.full(n, -np.inf)
        ratio[cand] = sign * np.exp(logabs - logdet_y)
        if np.any(ratio[cand] < -1e-8):
            bad = int(cand[np.argmin(ratio[cand])])
            raise NumericError(f"negative pivot adding item {ids[bad]!r}; kernel is not PSD")
        j = _pick(ratio, q)
        if ratio[j] < eps:
            break
        chosen.append(j)
        gains.append(math.log(ratio[j]))
        logdet_y = float(logabs[np.flatnonzero(cand == j)[0]])
        available[j] = False

    return _finish(ids, q, chosen, gains, k)


def exhaustive_map(L: np.ndarray, k: int) -> tuple[tuple[int, ...], float]:
    """Exact MAP set of size ``k`` by enumeration (ties to the lexicographically smallest set)."""
    L = np.asarray(L, dtype=np.float64)
    n = L.shape[0]
    _validate(k, n)
    if n > EXHAUSTIVE_MAX_ITEMS or k > EXHAUSTIVE_MAX_K or k > n:
        raise ValueError(
            f"exhaustive search limited to M <= {EXHAUSTIVE_MAX_ITEMS}, "
            f"k <= min(M, {EXHAUSTIVE_MAX_K}); got M={n}, k={k}"
        )
    subsets = np.array(list(combinations(range(n), k)), dtype=np.intp)
    dets = np.linalg.det(L[subsets[:, :, None], subsets[:, None, :]])
    best = int(np.argmax(dets))
    return tuple(int(i) for i in subsets[best]), float(dets[best])
