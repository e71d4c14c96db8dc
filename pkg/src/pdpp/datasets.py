"""Readers for ratings and catalog files.

MovieLens 1M uses ``::`` separated records (``ratings.dat``: user, movie,
rating, timestamp; ``movies.dat``: movie, title, ``|``-joined genres) in
latin-1. A generic CSV with a header row is accepted for ratings, and tab
separated lines for the catalog.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from pdpp.errors import IngestionError
from pdpp.similarity import ItemCatalog

logger = logging.getLogger(__name__)

MAX_MALFORMED_RATE = 0.001
RATING_COLUMNS = ("user_id", "item_id", "rating", "timestamp")


@dataclass
class InteractionDataset:
    """Interaction log with optional explicit ratings.

    Rows with a missing rating are implicit positives. Records are kept sorted
    by (user_id, timestamp).
    """

    frame: pd.DataFrame
    positivity_threshold: float = 4.0
    malformed: int = field(default=0, compare=False)

    def __post_init__(self):
        missing = {"user_id", "item_id"} - set(self.frame.columns)
        if missing:
            raise IngestionError(f"interaction frame lacks columns {sorted(missing)}")
        f = self.frame.copy()
        f["user_id"] = f["user_id"].astype(str)
        f["item_id"] = f["item_id"].astype(str)
        if "rating" not in f:
            f["rating"] = np.nan
        if "timestamp" not in f:
            f["timestamp"] = 0
        f = f.sort_values(["user_id", "timestamp"], kind="mergesort").reset_index(drop=True)
        self.frame = f[list(RATING_COLUMNS)]

    @classmethod
    def from_records(cls, records, positivity_threshold: float = 4.0) -> "InteractionDataset":
        rows = [tuple(r) + (None,) * (4 - len(r)) for r in records]
        frame = pd.DataFrame(rows, columns=list(RATING_COLUMNS))
        frame["rating"] = pd.to_numeric(frame["rating"])
        frame["timestamp"] = pd.to_numeric(frame["timestamp"]).fillna(0)
        return cls(frame, positivity_threshold)

    def __len__(self) -> int:
        return len(self.frame)

    def is_positive(self) -> pd.Series:
        r = self.frame["rating"]
        return r.isna() | (r >= self.positivity_threshold)

    def positives(self) -> pd.DataFrame:
        return self.frame[self.is_positive()]

    def pairs(self, positive_only: bool = False) -> list[tuple[str, str]]:
        f = self.positives() if positive_only else self.frame
        return list(zip(f["user_id"], f["item_id"]))

    def subset(self, mask) -> "InteractionDataset":
        return InteractionDataset(self.frame[mask].reset_index(drop=True), self.positivity_threshold)


def _split_line(line: str) -> list[str]:
    if "::" in line:
        return line.split("::")
    if "\t" in line:
        return line.split("\t")
    return line.split(",")


def _check_malformed(path, bad: int, total: int):
    if bad:
        logger.warning("%s: skipped %d malformed line(s) of %d", path, bad, total)
    if total and bad / total > MAX_MALFORMED_RATE:
        raise IngestionError(
            f"{path}: {bad} of {total} lines malformed, above the {MAX_MALFORMED_RATE:.1%} limit"
        )


def read_ratings(path, positivity_threshold: float = 4.0) -> InteractionDataset:
    """Read ``ratings.dat`` (``::``) or a CSV with a header naming user/item/rating/timestamp."""
    path = Path(path)
    try:
        text = path.read_text(encoding="latin-1")
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from None
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = None
    if lines and "::" not in lines[0]:
        first = [c.strip().lower() for c in _split_line(lines[0])]
        if "user_id" in first or "userid" in first:
            header = [{"userid": "user_id", "movieid": "item_id", "itemid": "item_id"}.get(c, c) for c in first]
            lines = lines[1:]
    rows, bad = [], 0
    for line in lines:
        parts = [p.strip() for p in _split_line(line)]
        try:
            if header is not None:
                rec = dict(zip(header, parts))
                if len(parts) != len(header):
                    raise ValueError
                u, i = rec["user_id"], rec["item_id"]
                r = float(rec["rating"]) if rec.get("rating") else np.nan
                t = int(float(rec["timestamp"])) if rec.get("timestamp") else 0
            else:
                if len(parts) != 4:
                    raise ValueError
                u, i, r, t = parts[0], parts[1], float(parts[2]), int(parts[3])
            if not u or not i:
                raise ValueError
        except (ValueError, KeyError):
            bad += 1
            continue
        rows.append((u, i, r, t))
    _check_malformed(path, bad, len(lines))
    frame = pd.DataFrame(rows, columns=list(RATING_COLUMNS))
    ds = InteractionDataset(frame, positivity_threshold)
    ds.malformed = bad
    return ds


def read_catalog(path) -> tuple[ItemCatalog, int]:
    """Read ``movies.dat``-style lines: ``item_id<sep>title<sep>genre1|genre2``.

    Returns the catalog and the number of malformed lines skipped.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="latin-1")
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from None
    lines = [ln for ln in text.splitlines() if ln.strip()]
    pairs, bad, seen = [], 0, set()
    for line in lines:
        parts = line.split("::") if "::" in line else line.split("\t")
        if len(parts) < 3:
            bad += 1
            continue
        item_id = parts[0].strip()
        genres = [g.strip() for g in parts[-1].split("|") if g.strip()]
        if not item_id or not genres or item_id in seen:
            bad += 1
            continue
        seen.add(item_id)
        pairs.append((item_id, genres))
    _check_malformed(path, bad, len(lines))
    return ItemCatalog.from_pairs(pairs), bad


def parse_movielens(ratings_path, movies_path, positivity_threshold: float = 4.0):
    """Load MovieLens-format ratings and movie catalog."""
    catalog, _ = read_catalog(movies_path)
    ratings = read_ratings(ratings_path, positivity_threshold)
    return ratings, catalog


def write_ratings(path, data: InteractionDataset):
    data.frame.to_csv(path, index=False)


def write_catalog(path, catalog: ItemCatalog):
    with open(path, "w", encoding="latin-1") as fh:
        for item_id, genres in catalog.items.items():
            fh.write(f"{item_id}\t\t{'|'.join(sorted(genres))}\n")
