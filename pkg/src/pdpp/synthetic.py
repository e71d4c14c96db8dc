"""Synthetic MovieLens-shaped corpora for tests and demos.

Users get Dirichlet genre preferences with a per-user concentration, so the
population spans narrow and broad tastes (low and high genre entropy).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from pdpp.datasets import InteractionDataset
from pdpp.similarity import ItemCatalog

GENRES = (
    "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime",
    "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "Musical",
    "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
)


def make_corpus(
    n_users: int = 300,
    n_items: int = 200,
    n_genres: int = 8,
    ratings_per_user: tuple[int, int] = (25, 60),
    seed: int = 0,
) -> tuple[InteractionDataset, ItemCatalog]:
    rng = np.random.default_rng(seed)
    genres = GENRES[:n_genres]

    membership = np.zeros((n_items, n_genres))
    catalog_pairs = []
    for i in range(n_items):
        extra = rng.choice(3, p=[0.55, 0.3, 0.15])
        gs = rng.choice(n_genres, size=1 + extra, replace=False)
        membership[i, gs] = 1.0
        catalog_pairs.append((str(i + 1), [genres[g] for g in sorted(gs)]))
    popularity = rng.pareto(1.5, n_items) + 1.0
    quality = rng.normal(0.0, 0.5, n_items)

    rows = []
    ts = 978300000
    for u in range(n_users):
        conc = np.exp(rng.uniform(np.log(0.05), np.log(3.0)))
        pref = rng.dirichlet(np.full(n_genres, conc))
        affinity = (membership @ pref) / membership.sum(axis=1)
        p = popularity * (affinity + 1e-3)
        p /= p.sum()
        n = int(rng.integers(ratings_per_user[0], ratings_per_user[1] + 1))
        items = rng.choice(n_items, size=min(n, n_items), replace=False, p=p)
        scale = affinity.max() or 1.0
        for i in items:
            score = 2.4 + 2.2 * affinity[i] / scale + quality[i] + rng.normal(0.0, 0.7)
            rating = int(np.clip(np.rint(score), 1, 5))
            ts += int(rng.integers(1, 600))
            rows.append((str(u + 1), str(i + 1), float(rating), ts))

    frame = pd.DataFrame(rows, columns=["user_id", "item_id", "rating", "timestamp"])
    return InteractionDataset(frame), ItemCatalog.from_pairs(catalog_pairs)


def write_movielens(outdir, data: InteractionDataset, catalog: ItemCatalog) -> tuple[Path, Path]:
    """Write ``ratings.dat`` and ``movies.dat`` in MovieLens 1M layout."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    ratings = outdir / "ratings.dat"
    movies = outdir / "movies.dat"
    with open(ratings, "w", encoding="latin-1") as fh:
        for u, i, r, t in data.frame.itertuples(index=False):
            fh.write(f"{u}::{i}::{int(r)}::{int(t)}\n")
    with open(movies, "w", encoding="latin-1") as fh:
        for item_id, gs in catalog.items.items():
            fh.write(f"{item_id}::Movie {item_id} (2000)::{'|'.join(sorted(gs))}\n")
    return ratings, movies
