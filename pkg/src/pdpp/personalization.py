"""Per-user diversity propensity and the personalized trade-off ``alpha_u``.

A user's propensity ``f_u`` is the Shannon entropy (nats) of the genre
distribution of their interactions, rescaled with an offset min-max
normalization ``(H - h_min + l) / (h_max - h_min + l)``. The personalized
trade-off is ``alpha_u = f_u * alpha_0``; users with too little history fall
back to ``alpha_0``.

Also holds the two file interfaces owned here: the alpha-index snapshot CSV
and the JSON-lines interaction event stream.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping

import numpy as np

from pdpp.errors import ConfigurationError, IngestionError
from pdpp.similarity import ItemCatalog

SNAPSHOT_FIELDS = ("user_id", "H", "f_u", "alpha_u", "interaction_count")
EVENT_TYPES = ("download", "rating")


class UnknownItemError(IngestionError):
    pass


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    genre_counts: Mapping[str, float] = field(default_factory=dict)
    interaction_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "user_id", str(self.user_id))
        object.__setattr__(self, "genre_counts", MappingProxyType(dict(self.genre_counts)))

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "genre_counts": dict(self.genre_counts),
            "interaction_count": self.interaction_count,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "UserProfile":
        return cls(d["user_id"], d.get("genre_counts", {}), int(d.get("interaction_count", 0)))


@dataclass(frozen=True)
class EntropyStats:
    h_min: float
    h_max: float
    population_size: int
    hist_edges: tuple[float, ...] = ()
    hist_counts: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.h_min <= self.h_max:
            raise ConfigurationError(f"invalid entropy range [{self.h_min}, {self.h_max}]")


@dataclass(frozen=True)
class PersonalizationParams:
    alpha_0: float = 0.6
    l: float = 0.0
    cold_start_min_interactions: int = 5
    event_types: frozenset[str] | None = None  # None keeps every event type

    def __post_init__(self):
        if not 0.0 <= self.alpha_0 <= 1.0:
            raise ConfigurationError(f"alpha_0 must lie in [0, 1], got {self.alpha_0}")
        if self.l < 0:
            raise ConfigurationError(f"l must be non-negative, got {self.l}")
        if self.cold_start_min_interactions < 0:
            raise ConfigurationError("cold_start_min_interactions must be >= 0")


@dataclass(frozen=True)
class AlphaRecord:
    """One row of the alpha index."""

    user_id: str
    H: float | None
    f_u: float | None
    alpha_u: float
    interaction_count: int
    cold_start: bool = False


@dataclass(frozen=True)
class Event:
    user_id: str
    item_id: str
    ts: float | None = None
    event: str = "download"
    value: float | None = None


def compute_entropy(profile: UserProfile) -> float | None:
    """Shannon entropy of the genre distribution in nats, or None for an empty profile."""
    counts = np.array([c for c in profile.genre_counts.values() if c > 0], dtype=np.float64)
    if profile.interaction_count <= 0 or counts.size == 0:
        return None
    p = counts / counts.sum()
    return float(max(0.0, -np.sum(p * np.log(p))))


def is_cold(profile: UserProfile | None, params: PersonalizationParams) -> bool:
    if profile is None or profile.interaction_count <= 0:
        return True
    return profile.interaction_count < params.cold_start_min_interactions


def compute_population_stats(
    profiles: Iterable[UserProfile], min_interactions: int = 5, bins: int = 20
) -> EntropyStats:
    """Entropy extrema over users with at least ``min_interactions`` events.

    The returned stats carry a histogram of the qualifying entropies.
    """
    values = []
    for p in profiles:
        if p.interaction_count >= max(min_interactions, 1):
            h = compute_entropy(p)
            if h is not None:
                values.append(h)
    if not values:
        raise ConfigurationError("no users pass the cold-start threshold; cannot compute entropy range")
    arr = np.array(values)
    counts, edges = np.histogram(arr, bins=bins)
    return EntropyStats(
        h_min=float(arr.min()),
        h_max=float(arr.max()),
        population_size=len(values),
        hist_edges=tuple(float(e) for e in edges),
        hist_counts=tuple(int(c) for c in counts),
    )


def normalize_f(H: float, stats: EntropyStats, l: float) -> float:
    if l < 0:
        raise ValueError(f"l must be non-negative, got {l}")
    denom = stats.h_max - stats.h_min + l
    if denom <= 0:
        # degenerate population with no offset: behave like plain DPP
        return 1.0
    f = (H - stats.h_min + l) / denom
    return float(min(1.0, max(0.0, f)))


def personalize(
    profile: UserProfile | None, stats: EntropyStats | None, params: PersonalizationParams, user_id=None
) -> AlphaRecord:
    """Alpha-index record for one user, routing cold users to ``alpha_0``."""
    uid = str(user_id if profile is None else profile.user_id)
    count = 0 if profile is None else profile.interaction_count
    H = None if profile is None else compute_entropy(profile)
    if H is None or is_cold(profile, params) or stats is None:
        return AlphaRecord(uid, H, None, params.alpha_0, count, cold_start=True)
    f = normalize_f(H, stats, params.l)
    return AlphaRecord(uid, H, f, f * params.alpha_0, count)


def alpha_for_user(profile: UserProfile | None, stats: EntropyStats | None, params: PersonalizationParams) -> float:
    return personalize(profile, stats, params).alpha_u


def apply_event(profile: UserProfile, item_id, catalog: ItemCatalog) -> UserProfile:
    """Fold one interaction into a profile, splitting a unit of mass across the item's genres.

    Not idempotent: replaying an event counts it twice.
    """
    if item_id not in catalog:
        raise UnknownItemError(f"unknown item {item_id!r}")
    genres = catalog.genres(item_id)
    share = 1.0 / len(genres)
    counts = dict(profile.genre_counts)
    for g in genres:
        counts[g] = counts.get(g, 0.0) + share
    return replace(profile, genre_counts=counts, interaction_count=profile.interaction_count + 1)


def build_profiles(
    interactions: Iterable[tuple[object, object]],
    catalog: ItemCatalog,
    dead_letters: list | None = None,
) -> dict[str, UserProfile]:
    """Profiles from (user_id, item_id) pairs; unknown items go to ``dead_letters``."""
    counts: dict[str, dict[str, float]] = {}
    totals: dict[str, int] = {}
    for user_id, item_id in interactions:
        uid, iid = str(user_id), str(item_id)
        if iid not in catalog:
            if dead_letters is not None:
                dead_letters.append({"user_id": uid, "item_id": iid, "reason": "unknown item"})
            continue
        genres = catalog.genres(iid)
        share = 1.0 / len(genres)
        c = counts.setdefault(uid, {})
        for g in genres:
            c[g] = c.get(g, 0.0) + share
        totals[uid] = totals.get(uid, 0) + 1
    return {u: UserProfile(u, counts[u], totals[u]) for u in counts}


def init_alpha(
    profiles: Mapping[str, UserProfile], params: PersonalizationParams, bins: int = 20
) -> tuple[EntropyStats, dict[str, AlphaRecord]]:
    """Offline alpha initializer: entropy range plus one record per user with history."""
    stats = compute_population_stats(profiles.values(), params.cold_start_min_interactions, bins)
    records = {
        uid: personalize(p, stats, params)
        for uid, p in sorted(profiles.items())
        if p.interaction_count > 0
    }
    return stats, records


def stats_from_records(records: Iterable[AlphaRecord], params: PersonalizationParams) -> EntropyStats | None:
    """Recover the entropy range from a snapshot's warm rows, or None if there are none."""
    hs = [
        r.H
        for r in records
        if r.H is not None and r.interaction_count >= max(params.cold_start_min_interactions, 1)
    ]
    if not hs:
        return None
    return EntropyStats(min(hs), max(hs), len(hs))


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def write_alpha_snapshot(path, records: Iterable[AlphaRecord], comment: str = "") -> int:
    """Write the snapshot CSV; ``comment`` becomes a leading ``#`` line."""
    n = 0
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(SNAPSHOT_FIELDS)
        for r in records:
            w.writerow([r.user_id, _fmt(r.H), _fmt(r.f_u), _fmt(r.alpha_u), r.interaction_count])
            n += 1
    return n


def read_alpha_snapshot(path, params: PersonalizationParams | None = None) -> dict[str, AlphaRecord]:
    """Parse a snapshot CSV. Raises :class:`IngestionError` on any malformed row."""
    params = params or PersonalizationParams()
    out: dict[str, AlphaRecord] = {}
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IngestionError(f"cannot read snapshot {path}: {exc}") from None
    with fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        if reader.fieldnames is None or tuple(f.strip() for f in reader.fieldnames) != SNAPSHOT_FIELDS:
            raise IngestionError(f"{path}: expected header {','.join(SNAPSHOT_FIELDS)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                row = {k.strip(): (v or "").strip() for k, v in row.items()}
                H = float(row["H"]) if row["H"] else None
                f_u = float(row["f_u"]) if row["f_u"] else None
                alpha_u = float(row["alpha_u"])
                count = int(row["interaction_count"])
            except (TypeError, ValueError, AttributeError) as exc:
                raise IngestionError(f"{path}:{lineno}: malformed snapshot row ({exc})") from None
            if not row["user_id"] or not 0.0 <= alpha_u <= 1.0 or count < 0:
                raise IngestionError(f"{path}:{lineno}: invalid snapshot values")
            cold = f_u is None or count < params.cold_start_min_interactions
            out[row["user_id"]] = AlphaRecord(row["user_id"], H, f_u, alpha_u, count, cold)
    return out


def parse_event(line: str, lineno: int = 1) -> Event:
    try:
        d = json.loads(line)
        if not isinstance(d, dict):
            raise ValueError("event must be a JSON object")
        event = d.get("event", "download")
        if event not in EVENT_TYPES:
            raise ValueError(f"unknown event type {event!r}")
        value = d.get("value")
        ts = d.get("ts")
        return Event(
            user_id=str(d["user_id"]),
            item_id=str(d["item_id"]),
            ts=None if ts is None else float(ts),
            event=event,
            value=None if value is None else float(value),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise IngestionError(f"line {lineno}: {exc}") from None


def iter_events(lines: Iterable[str]) -> Iterator[Event]:
    for lineno, line in enumerate(lines, start=1):
        if line.strip():
            yield parse_event(line, lineno)


def save_profiles(path, profiles: Mapping[str, UserProfile]):
    Path(path).write_text(json.dumps([p.to_dict() for p in profiles.values()]))


def load_profiles(path) -> dict[str, UserProfile]:
    data = json.loads(Path(path).read_text())
    return {str(d["user_id"]): UserProfile.from_dict(d) for d in data}

