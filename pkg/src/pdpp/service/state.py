"""Serving state: the alpha index and the nearline profile writer.

Request handlers read one immutable :class:`AlphaSnapshot` per request and
never take a lock. A single writer (serialized by ``_write_lock``) applies
events or loads a new snapshot file and publishes a fresh snapshot object by
rebinding one attribute, which readers observe atomically.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping

from pdpp.dpp import fast_greedy_map
from pdpp.errors import IngestionError, PdppError
from pdpp.kernel import KernelSpec
from pdpp.personalization import (
    AlphaRecord,
    EntropyStats,
    PersonalizationParams,
    UnknownItemError,
    UserProfile,
    apply_event,
    load_profiles,
    parse_event,
    personalize,
    read_alpha_snapshot,
    stats_from_records,
)
from pdpp.similarity import GenreIndex, ItemCatalog

logger = logging.getLogger(__name__)

_EMPTY: Mapping = MappingProxyType({})


@dataclass(frozen=True)
class ServiceSettings:
    host: str = "127.0.0.1"
    port: int = 8000
    alpha_0: float = 0.6
    l: float = 0.0
    cold_start_min_interactions: int = 5
    catalog_path: str = ""
    snapshot_path: str = ""
    profiles_path: str = ""
    event_types: tuple[str, ...] = ()

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None, **overrides) -> "ServiceSettings":
        env = os.environ if env is None else env
        values = {
            "host": env.get("PDPP_HOST", cls.host),
            "port": int(env.get("PDPP_PORT", cls.port)),
            "alpha_0": float(env.get("PDPP_ALPHA_0", cls.alpha_0)),
            "l": float(env.get("PDPP_L", cls.l)),
            "cold_start_min_interactions": int(env.get("PDPP_COLD_START", cls.cold_start_min_interactions)),
            "catalog_path": env.get("PDPP_CATALOG", ""),
            "snapshot_path": env.get("PDPP_SNAPSHOT", ""),
            "profiles_path": env.get("PDPP_PROFILES", ""),
            "event_types": tuple(t for t in env.get("PDPP_EVENT_TYPES", "").split(",") if t),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @property
    def params(self) -> PersonalizationParams:
        return PersonalizationParams(
            self.alpha_0,
            self.l,
            self.cold_start_min_interactions,
            frozenset(self.event_types) or None,
        )


@dataclass(frozen=True)
class AlphaSnapshot:
    """Immutable view of the alpha index: bulk records plus nearline overrides."""

    base: Mapping[str, AlphaRecord] = _EMPTY
    overlay: Mapping[str, AlphaRecord] = _EMPTY
    stats: EntropyStats | None = None
    version: int = 0

    def get(self, user_id: str) -> AlphaRecord | None:
        rec = self.overlay.get(user_id)
        return rec if rec is not None else self.base.get(user_id)

    def __len__(self) -> int:
        return len(self.base) + sum(1 for u in self.overlay if u not in self.base)

    def with_updates(self, updates: Mapping[str, AlphaRecord]) -> "AlphaSnapshot":
        merged = dict(self.overlay)
        merged.update(updates)
        return AlphaSnapshot(self.base, MappingProxyType(merged), self.stats, self.version + 1)


@dataclass(frozen=True)
class RerankResult:
    items: list[str]
    alpha_used: float
    cold_start: bool
    fallback_fill: int
    latency_micros: int


@dataclass
class IngestResult:
    accepted: int = 0
    ignored: int = 0
    rejected: list[tuple[int, str]] = field(default_factory=list)
    dead_lettered: list[tuple[int, str]] = field(default_factory=list)
    index_version: int = 0


class RerankService:
    """pDPP re-ranking over caller-supplied candidates, with a live alpha index."""

    def __init__(self, catalog: ItemCatalog, params: PersonalizationParams):
        self.catalog = catalog
        self.genres = GenreIndex(catalog)
        self.params = params
        self._snapshot = AlphaSnapshot()
        self._profiles: dict[str, UserProfile] = {}
        self._write_lock = threading.Lock()
        self.dead_letters: list[dict] = []

    @property
    def snapshot(self) -> AlphaSnapshot:
        return self._snapshot

    # ---- online path (read-only) -------------------------------------------

    def lookup_alpha(self, user_id: str) -> tuple[float, bool]:
        rec = self._snapshot.get(str(user_id))
        if rec is None or rec.cold_start:
            return self.params.alpha_0, True
        return rec.alpha_u, False

    def rerank(self, user_id: str, candidates: Iterable[tuple[str, float]], k: int) -> RerankResult:
        t0 = time.perf_counter_ns()
        best: dict[str, float] = {}
        for item_id, score in candidates:
            item_id = str(item_id)
            prev = best.get(item_id)
            if prev is None or score > prev:
                best[item_id] = float(score)
        if not best:
            raise ValueError("no candidates")
        ids = list(best)
        alpha, cold = self.lookup_alpha(user_id)
        spec = KernelSpec.create(ids, list(best.values()), self.genres.view(ids), alpha)
        sel = fast_greedy_map(spec, k)
        return RerankResult(
            items=list(sel.items),
            alpha_used=alpha,
            cold_start=cold,
            fallback_fill=sel.fallback_fill,
            latency_micros=(time.perf_counter_ns() - t0) // 1000,
        )

    # ---- nearline path (single writer) -------------------------------------

    def ingest_lines(self, lines: Iterable[str]) -> IngestResult:
        """Apply a JSON-lines batch of events and publish the updated alpha records."""
        result = IngestResult()
        with self._write_lock:
            snap = self._snapshot
            updates: dict[str, AlphaRecord] = {}
            allowed = self.params.event_types
            for lineno, line in enumerate(lines, start=1):
                if not line.strip():
                    continue
                try:
                    event = parse_event(line, lineno)
                except IngestionError as exc:
                    result.rejected.append((lineno, str(exc)))
                    continue
                if allowed is not None and event.event not in allowed:
                    result.ignored += 1
                    continue
                profile = self._profiles.get(event.user_id) or UserProfile(event.user_id)
                try:
                    profile = apply_event(profile, event.item_id, self.catalog)
                except UnknownItemError as exc:
                    self.dead_letters.append({"line": lineno, "event": json.loads(line), "reason": str(exc)})
                    result.dead_lettered.append((lineno, str(exc)))
                    continue
                self._profiles[event.user_id] = profile
                updates[event.user_id] = personalize(profile, snap.stats, self.params)
                result.accepted += 1
            if updates:
                self._snapshot = snap.with_updates(updates)
            result.index_version = self._snapshot.version
        return result

    def rebuild_index(self, snapshot_path, profiles_path=None) -> AlphaSnapshot:
        """Load a snapshot file and swap it in; the old index stays live on any error."""
        records = read_alpha_snapshot(snapshot_path, self.params)
        profiles = load_profiles(profiles_path) if profiles_path else None
        with self._write_lock:
            stats = stats_from_records(records.values(), self.params)
            new = AlphaSnapshot(
                MappingProxyType(records), _EMPTY, stats, self._snapshot.version + 1
            )
            if profiles is not None:
                self._profiles = dict(profiles)
            self._snapshot = new
        logger.info("alpha index v%d loaded: %d users", new.version, len(records))
        return new

    def load_profiles(self, profiles: Mapping[str, UserProfile]):
        with self._write_lock:
            self._profiles = dict(profiles)


def build_service(settings: ServiceSettings) -> RerankService:
    from pdpp.datasets import read_catalog

    if not settings.catalog_path:
        raise PdppError("a catalog path is required to serve")
    catalog, _ = read_catalog(settings.catalog_path)
    service = RerankService(catalog, settings.params)
    if settings.snapshot_path:
        service.rebuild_index(settings.snapshot_path, settings.profiles_path or None)
    elif settings.profiles_path:
        service.load_profiles(load_profiles(settings.profiles_path))
    return service
