import numpy as np
import pytest

from pdpp.kernel import KernelSpec
from pdpp.similarity import ItemCatalog, build_genre_similarity


def random_catalog(rng, n_items, n_genres=6, max_genres=3):
    pairs = []
    for i in range(n_items):
        size = int(rng.integers(1, max_genres + 1))
        gs = rng.choice(n_genres, size=min(size, n_genres), replace=False)
        pairs.append((str(i), {f"g{g}" for g in gs}))
    return ItemCatalog.from_pairs(pairs)


def random_spec(rng, n_items, alpha=None, n_genres=6):
    """Genre-Jaccard spec with uniform scores; alpha drawn from [0, 1] unless given."""
    S = build_genre_similarity(random_catalog(rng, n_items, n_genres))
    q = rng.uniform(0.05, 1.0, n_items)
    a = float(rng.uniform(0.0, 1.0)) if alpha is None else alpha
    return KernelSpec.create(S.ids, q, S, a)


def three_item_spec():
    S = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    return KernelSpec.create(["1", "2", "3"], [0.9, 0.8, 0.7], S, 0.9)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance gate: each criterion test records one line, printed after the run
ACCEPTANCE: dict[str, str] = {}


def record(criterion: str, ok: bool | None, detail: str):
    status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
    ACCEPTANCE[criterion] = f"[{status}] {criterion}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
