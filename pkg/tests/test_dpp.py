import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdpp.dpp import exhaustive_map, fast_greedy_map, naive_greedy_map
from pdpp.errors import NumericError
from pdpp.kernel import KernelSpec, build_dense_kernel

from conftest import random_spec, three_item_spec


def test_k1_picks_max_relevance():
    spec = KernelSpec.create("abcd", [0.3, 0.9, 0.9, 0.1], np.eye(4), 0.5)
    sel = fast_greedy_map(spec, 1)
    assert sel.items == ("b",)
    assert sel.gains == pytest.approx((math.log(0.81),))


def test_alpha_zero_full_sort(rng):
    spec = random_spec(rng, 15, alpha=0.0)
    sel = fast_greedy_map(spec, 15)
    assert list(sel.indices) == list(np.argsort(-spec.q, kind="stable"))


def test_three_item_example():
    spec = three_item_spec()
    sel = fast_greedy_map(spec, 2)
    assert sel.items == ("1", "3")
    assert sel.gains[0] == pytest.approx(math.log(0.81), abs=1e-15)
    assert sel.gains[1] == pytest.approx(math.log(0.49), abs=1e-12)
    # runner-up marginal ratio for item 2
    L = build_dense_kernel(spec)
    assert np.linalg.det(L[:2, :2]) / L[0, 0] == pytest.approx(0.1216, abs=1e-12)


def test_naive_diagonal():
    sel = naive_greedy_map(np.diag([4.0, 1.0, 9.0]), 2, ids=[1, 2, 3])
    assert sel.items == (3, 1)


def test_naive_three_item():
    L = build_dense_kernel(three_item_spec())
    assert naive_greedy_map(L, 2, ids=["1", "2", "3"]).items == ("1", "3")


def test_naive_full_permutation(rng):
    L = build_dense_kernel(random_spec(rng, 9))
    assert sorted(naive_greedy_map(L, 9).indices) == list(range(9))


def test_naive_rejects_non_psd():
    L = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(NumericError):
        naive_greedy_map(L, 2)


def test_exhaustive_three_item():
    L = build_dense_kernel(three_item_spec())
    Y, det = exhaustive_map(L, 2)
    assert Y == (0, 2)
    assert det == pytest.approx(0.3969, abs=1e-15)


def test_exhaustive_identity_tie():
    assert exhaustive_map(np.eye(4), 2) == ((0, 1), 1.0)


def test_exhaustive_whole_set(rng):
    L = build_dense_kernel(random_spec(rng, 5))
    Y, det = exhaustive_map(L, 5)
    assert Y == (0, 1, 2, 3, 4)
    assert det == pytest.approx(np.linalg.det(L))


def test_exhaustive_bounds():
    with pytest.raises(ValueError):
        exhaustive_map(np.eye(16), 2)
    with pytest.raises(ValueError):
        exhaustive_map(np.eye(10), 6)


@pytest.mark.parametrize("k", [0, -1])
def test_bad_k(k):
    with pytest.raises(ValueError):
        fast_greedy_map(three_item_spec(), k)


def test_no_candidates():
    spec = KernelSpec.create([], [], np.zeros((0, 0)), 0.5)
    with pytest.raises(ValueError):
        fast_greedy_map(spec, 3)


def test_k_larger_than_m():
    sel = fast_greedy_map(three_item_spec(), 10)
    assert len(sel) == 3


def test_exhaustion_fallback_fill():
    # three identical items: rank one at alpha = 1, so only one greedy step
    spec = KernelSpec.create("xyz", [0.5, 0.7, 0.6], np.ones((3, 3)), 1.0)
    sel = fast_greedy_map(spec, 3)
    assert sel.items == ("y", "z", "x")
    assert sel.fallback_fill == 2
    assert len(sel.gains) == 1
    naive = naive_greedy_map(build_dense_kernel(spec), 3, ids="xyz")
    assert naive == sel


def test_tie_break_prefers_higher_q_then_lower_index():
    spec = KernelSpec.create("abc", [0.5, 0.5, 0.5], np.eye(3), 0.3)
    assert fast_greedy_map(spec, 3).items == ("a", "b", "c")


def _check_selection(spec, k):
    L = build_dense_kernel(spec)
    fast = fast_greedy_map(spec, k)
    naive = naive_greedy_map(L, k, ids=spec.ids)
    assert fast.items == naive.items
    np.testing.assert_allclose(fast.gains, naive.gains, rtol=0, atol=1e-8)
    assert len(set(fast.items)) == len(fast.items) == min(k, len(spec.q))
    assert all(math.isfinite(g) for g in fast.gains)
    assert all(b <= a + 1e-9 for a, b in zip(fast.gains, fast.gains[1:]))
    greedy = list(fast.indices[: len(fast.gains)])
    for t in range(1, len(greedy) + 1):
        sub = L[np.ix_(greedy[:t], greedy[:t])]
        assert sum(fast.gains[:t]) == pytest.approx(np.linalg.slogdet(sub)[1], abs=1e-8)


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 50), st.integers(1, 10), st.floats(0.0, 1.0), st.integers(0, 2**31))
def test_fast_matches_naive(n, k, alpha, seed):
    _check_selection(random_spec(np.random.default_rng(seed), n, alpha=alpha), k)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**31))
def test_alpha_zero_reduction(n, seed):
    spec = random_spec(np.random.default_rng(seed), n, alpha=0.0)
    sel = fast_greedy_map(spec, n)
    order = sorted(range(n), key=lambda i: (-spec.q[i], i))
    assert list(sel.indices) == order


def test_deterministic_across_threads(rng):
    spec = random_spec(rng, 300, alpha=0.7)
    expected = fast_greedy_map(spec, 20)
    with ThreadPoolExecutor(8) as pool:
        results = list(pool.map(lambda _: fast_greedy_map(spec, 20), range(32)))
    assert all(r == expected for r in results)
