"""Offline experiment protocol: preprocessing, metrics and model comparison.

One run: filter sparse users/items, split ratings 70/30, fit item-CF on the
training positives, score every non-history item for each test user, re-rank
with each model in the grid and compare precision@k and intra-list distance@k.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sps

from pdpp.datasets import InteractionDataset, read_catalog, read_ratings
from pdpp.dpp import fast_greedy_map
from pdpp.errors import ConfigurationError, PdppError
from pdpp.kernel import MIN_SCORE, KernelSpec
from pdpp.personalization import (
    EntropyStats,
    PersonalizationParams,
    build_profiles,
    compute_population_stats,
    personalize,
)
from pdpp.ranker import fit_item_cf
from pdpp.similarity import DenseSimilarityView, ItemCatalog, SimilarityMatrix, build_genre_similarity

logger = logging.getLogger(__name__)

DEFAULT_ALPHA_GRID = tuple(round(0.01 * i, 2) for i in range(1, 11))


class StageError(PdppError):
    """Failure inside a named experiment stage."""

    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ModelSpec:
    kind: str  # BASE | DPP | pDPP
    alpha: float = 0.0  # DPP alpha, or alpha_0 for pDPP
    l: float | str = 0.0  # pDPP offset; "hmin" uses the population minimum entropy

    @property
    def name(self) -> str:
        if self.kind == "BASE":
            return "BASE"
        if self.kind == "DPP":
            return f"DPP(alpha={self.alpha:g})"
        l = self.l if isinstance(self.l, str) else f"{self.l:g}"
        return f"pDPP(l={l},alpha_0={self.alpha:g})"

    @classmethod
    def parse(cls, text: str) -> "ModelSpec":
        t = text.strip()
        if t.upper() == "BASE":
            return cls("BASE")
        m = re.fullmatch(r"(?i)(p?dpp)\s*\((.*)\)", t)
        if not m:
            raise ConfigurationError(f"cannot parse model spec {text!r}")
        args = [a.strip() for a in m.group(2).split(",") if a.strip()]
        kv = dict(a.split("=", 1) if "=" in a else ("", a) for a in args)
        kv = {k.strip(): v.strip() for k, v in kv.items()}
        try:
            if m.group(1).lower() == "dpp":
                alpha = float(kv.get("alpha", args[0] if args else "nan"))
                spec = cls("DPP", alpha)
            else:
                pos = [a for a in args if "=" not in a]
                l_raw = kv.get("l", pos[0] if pos else "0")
                a_raw = kv.get("alpha_0", pos[1] if len(pos) > 1 else "nan")
                l_val: float | str = "hmin" if l_raw.lower() in ("hmin", "h_min") else float(l_raw)
                spec = cls("pDPP", float(a_raw), l_val)
        except (ValueError, IndexError):
            raise ConfigurationError(f"cannot parse model spec {text!r}") from None
        if not 0.0 <= spec.alpha <= 1.0:
            raise ConfigurationError(f"{text!r}: alpha must lie in [0, 1]")
        if isinstance(spec.l, float) and spec.l < 0:
            raise ConfigurationError(f"{text!r}: l must be >= 0")
        return spec


def _split_grid(text: str) -> list[str]:
    out, depth, cur = [], 0, ""
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch in ",;" and depth == 0:
            out.append(cur)
            cur = ""
        else:
            cur += ch
    out.append(cur)
    return [s.strip() for s in out if s.strip()]


@dataclass(frozen=True)
class ExperimentConfig:
    ratings_path: str = ""
    movies_path: str = ""
    split_ratio: float = 0.7
    positivity_threshold: float = 4.0
    k: int = 5
    grid: tuple[ModelSpec, ...] = (ModelSpec("BASE"),)
    seed: int = 0
    runs: int = 1
    min_item_raters: int = 10
    min_user_ratings: int = 20
    neighbors: int = 50
    cold_start_min_interactions: int = 5
    max_users: int = 0  # 0 evaluates every eligible test user
    impressions_path: str = ""
    downloads_path: str = ""

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigurationError("split_ratio must lie strictly between 0 and 1")
        if self.k < 1:
            raise ConfigurationError("k must be >= 1")
        if not self.grid:
            raise ConfigurationError("model grid is empty")
        if self.runs < 1:
            raise ConfigurationError("runs must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = [m.name for m in self.grid]
        return d

    def to_text(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            if key == "grid":
                value = "; ".join(value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> "ExperimentConfig":
        kwargs: dict = {}
        types = {f: t for f, t in cls.__annotations__.items()}
        for key, raw in values.items():
            if key not in types:
                raise ConfigurationError(f"unknown config key {key!r}")
            if key == "grid":
                items = _split_grid(raw) if isinstance(raw, str) else list(raw)
                kwargs[key] = tuple(m if isinstance(m, ModelSpec) else ModelSpec.parse(m) for m in items)
                continue
            t = types[key]
            try:
                if t == "int":
                    kwargs[key] = int(raw)
                elif t == "float":
                    kwargs[key] = float(raw)
                else:
                    kwargs[key] = str(raw)
            except ValueError:
                raise ConfigurationError(f"bad value for {key}: {raw!r}") from None
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        values = {}
        for n, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"config line {n}: expected key = value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
        return cls.from_mapping(values)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())


# --------------------------------------------------------------------------
# preprocessing


def filter_sparse(raw: InteractionDataset, min_item_raters: int = 10, min_user_ratings: int = 20) -> InteractionDataset:
    """Drop items with too few raters and users with too few ratings until both rules hold."""
    f = raw.frame
    while True:
        raters = f.groupby("item_id")["user_id"].transform("nunique")
        f = f[raters >= min_item_raters]
        per_user = f.groupby("user_id")["item_id"].transform("size")
        f = f[per_user >= min_user_ratings]
        if f.empty:
            break
        if (f.groupby("item_id")["user_id"].nunique() >= min_item_raters).all():
            break
    return InteractionDataset(f.reset_index(drop=True), raw.positivity_threshold)


def preprocess_split(raw: InteractionDataset, config: ExperimentConfig, seed: int | None = None):
    """Filter and randomly split ratings into (train, test) with the config seed."""
    if len(raw) == 0:
        raise ConfigurationError("empty interaction dataset")
    data = filter_sparse(raw, config.min_item_raters, config.min_user_ratings)
    if len(data) == 0:
        raise ConfigurationError("filtering removed every interaction")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    perm = rng.permutation(len(data))
    n_train = int(round(config.split_ratio * len(data)))
    mask = np.zeros(len(data), dtype=bool)
    mask[perm[:n_train]] = True
    return data.subset(mask), data.subset(~mask)


# --------------------------------------------------------------------------
# metrics


def precision_at_k(
    recommendations: Mapping[object, Sequence], truth: Mapping[object, Iterable], k: int
) -> float:
    """Micro-averaged precision: total hits over total recommended slots.

    Users without a truth entry are skipped (and counted in the log).
    """
    hits = slots = excluded = 0
    for user, recs in recommendations.items():
        if user not in truth:
            excluded += 1
            continue
        top = list(recs)[:k]
        t = set(truth[user])
        hits += sum(1 for r in top if r in t)
        slots += len(top)
    if excluded:
        logger.info("precision@%d: %d user(s) without truth excluded", k, excluded)
    return hits / slots if slots else 0.0


def _similarity_lookup(S):
    if isinstance(S, SimilarityMatrix):
        return S.lookup
    if callable(S):
        return S
    return lambda a, b: 1.0 if a == b else float(S[a][b])


def ild_at_k(recommendations: Mapping[object, Sequence], S, k: int) -> float | None:
    """Mean over users of the mean ``1 - S_ij`` over unordered pairs in the top k.

    Returns None when no list has two items (e.g. ``k == 1``).
    """
    if k < 2:
        return None
    lookup = _similarity_lookup(S)
    per_user = []
    for recs in recommendations.values():
        top = list(recs)[:k]
        if len(top) < 2:
            continue
        d = [1.0 - lookup(a, b) for a, b in combinations(top, 2)]
        per_user.append(sum(d) / len(d))
    return float(np.mean(per_user)) if per_user else None


def avg_standardized(rows: Mapping[str, tuple[float, float]]) -> dict[str, float]:
    """Min-max scale each metric across the compared models, then average the two."""
    if len(rows) < 2:
        raise ValueError("standardized average needs at least two models")
    names = list(rows)
    cols = np.array([rows[n] for n in names], dtype=np.float64)
    scaled = np.empty_like(cols)
    for c in range(cols.shape[1]):
        lo, hi = cols[:, c].min(), cols[:, c].max()
        scaled[:, c] = 0.5 if hi == lo else (cols[:, c] - lo) / (hi - lo)
    return {n: float(v) for n, v in zip(names, scaled.mean(axis=1))}


def log_metrics(impressions: Iterable[tuple], downloads: Iterable[tuple]) -> tuple[float | None, float | None]:
    """Download ratio and average downloads per user from (user, item) logs."""
    impressions = [(str(u), str(i)) for u, i in impressions]
    downloads = [(str(u), str(i)) for u, i in downloads]
    if not impressions:
        return None, None
    shown = set(impressions)
    stray = [d for d in downloads if d not in shown]
    if stray:
        raise ValueError(f"{len(stray)} download(s) without a matching impression, e.g. {stray[0]}")
    users = {u for u, _ in impressions}
    return len(downloads) / len(impressions), len(downloads) / len(users)


def read_log(path) -> list[tuple[str, str]]:
    """Read a (user_id, item_id) log as JSON lines or CSV with a header."""
    out = []
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip()]
    if lines and lines[0].lstrip().startswith("{"):
        for ln in lines:
            d = json.loads(ln)
            out.append((str(d["user_id"]), str(d["item_id"])))
    else:
        header = [h.strip() for h in lines[0].split(",")] if lines else []
        ui, ii = header.index("user_id"), header.index("item_id")
        for ln in lines[1:]:
            parts = [p.strip() for p in ln.split(",")]
            out.append((parts[ui], parts[ii]))
    return out


# --------------------------------------------------------------------------
# experiment


@dataclass
class ModelRow:
    name: str
    precision: float
    ild: float | None
    avg: float | None = None
    precision_std: float = 0.0
    ild_std: float = 0.0
    dr: float | None = None
    ad: float | None = None


@dataclass
class EvalReport:
    k: int
    rows: list[ModelRow]
    metadata: dict = field(default_factory=dict)
    entropy: EntropyStats | None = None
    lists: dict[str, dict[str, list[str]]] = field(default_factory=dict, repr=False)

    def row(self, name: str) -> ModelRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "rows": [asdict(r) for r in self.rows],
            "metadata": self.metadata,
            "entropy": None if self.entropy is None else asdict(self.entropy),
        }

    def table(self) -> str:
        k = self.k
        head = f"{'model':<32} {'P@' + str(k):>8} {'ILD@' + str(k):>8} {'avg':>8}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            ild = "n/a" if r.ild is None else f"{r.ild:.4f}"
            avg = "n/a" if r.avg is None else f"{r.avg:.4f}"
            lines.append(f"{r.name:<32} {r.precision:>8.4f} {ild:>8} {avg:>8}")
        return "\n".join(lines)


def _top_by_score(q: np.ndarray, k: int) -> np.ndarray:
    k = min(k, len(q))
    part = np.argpartition(-q, k - 1)[:k] if k < len(q) else np.arange(len(q))
    # widen to include every score tied with the k-th so the index tie-break is exact
    kth = q[part].min()
    pool = np.flatnonzero(q >= kth)
    return pool[np.lexsort((pool, -q[pool]))][:k]


def _frame_hash(frame: pd.DataFrame) -> str:
    h = hashlib.sha256(pd.util.hash_pandas_object(frame, index=False).values.tobytes())
    return h.hexdigest()[:16]


@dataclass
class _RunResult:
    metrics: dict[str, tuple[float, float | None]]
    lists: dict[str, dict[str, list[str]]]
    entropy: EntropyStats | None
    users: int


def _run_once(
    data: InteractionDataset,
    catalog: ItemCatalog,
    config: ExperimentConfig,
    seed: int,
    keep_lists: bool,
) -> _RunResult:
    stage = "preprocess"
    try:
        train, test = preprocess_split(data, config, seed)

        stage = "fit-ranker"
        items = sorted(set(train.frame["item_id"]) | set(test.frame["item_id"]))
        model = fit_item_cf(train, config.neighbors, items=items)
        index = {i: n for n, i in enumerate(model.item_ids)}

        stage = "similarity"
        known = [i for i in model.item_ids if i in catalog]
        if len(known) < len(model.item_ids):
            logger.warning("%d rated item(s) missing from catalog; similarity 0", len(model.item_ids) - len(known))
        sub = ItemCatalog({i: catalog.genres(i) for i in known}) if known else None
        S = build_genre_similarity(sub) if sub is not None else SimilarityMatrix((), np.zeros((0, 0)))
        s_positions = np.array([S._index.get(i, -1) for i in model.item_ids], dtype=np.intp)

        stage = "personalization"
        train_pos = train.positives()
        profiles = build_profiles(zip(train_pos["user_id"], train_pos["item_id"]), catalog)
        needs_stats = any(m.kind == "pDPP" for m in config.grid)
        stats = (
            compute_population_stats(profiles.values(), config.cold_start_min_interactions)
            if needs_stats
            else None
        )

        stage = "score"
        test_pos = test.positives()
        truth: dict[str, set[str]] = {}
        for u, i in zip(test_pos["user_id"], test_pos["item_id"]):
            truth.setdefault(u, set()).add(i)
        users = sorted(truth)
        if config.max_users and len(users) > config.max_users:
            rng = np.random.default_rng(seed)
            users = sorted(rng.choice(users, size=config.max_users, replace=False).tolist())
        history: dict[str, list[int]] = {}
        for u, i in zip(train_pos["user_id"], train_pos["item_id"]):
            history.setdefault(u, []).append(index[i])
        rows, cols = [], []
        for r, u in enumerate(users):
            h = history.get(u, [])
            rows.extend([r] * len(h))
            cols.extend(h)
        H = sps.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(users), len(model.item_ids)))
        H.sum_duplicates()
        H.data[:] = 1.0

        stage = "rerank"
        alphas: dict[ModelSpec, dict[str, float]] = {}
        for m in config.grid:
            if m.kind == "pDPP":
                l = stats.h_min if m.l == "hmin" else float(m.l)
                p = PersonalizationParams(m.alpha, l, config.cold_start_min_interactions)
                alphas[m] = {u: personalize(profiles.get(u), stats, p, user_id=u).alpha_u for u in users}

        lists: dict[str, dict[str, list[str]]] = {m.name: {} for m in config.grid}
        ids = model.item_ids
        batch = 256
        for start in range(0, len(users), batch):
            block = users[start : start + batch]
            Q = np.asarray((H[start : start + len(block)] @ model.weights.T).todense())
            for r, u in enumerate(block):
                mask = np.ones(len(ids), dtype=bool)
                mask[history.get(u, [])] = False
                cand = np.flatnonzero(mask)
                q = np.maximum(Q[r, cand], MIN_SCORE)
                view = None
                for m in config.grid:
                    alpha = m.alpha if m.kind == "DPP" else alphas[m][u] if m.kind == "pDPP" else 0.0
                    if m.kind == "BASE" or alpha == 0.0:
                        chosen = cand[_top_by_score(q, config.k)]
                    else:
                        if view is None:
                            view = DenseSimilarityView(S.values, s_positions[cand])
                        spec = KernelSpec(tuple(cand.tolist()), q, view, alpha)
                        sel = fast_greedy_map(spec, config.k)
                        chosen = np.asarray(sel.items, dtype=np.intp)
                    lists[m.name][u] = [ids[c] for c in chosen]

        stage = "metrics"
        metrics = {
            name: (precision_at_k(recs, truth, config.k), ild_at_k(recs, S, config.k))
            for name, recs in lists.items()
        }
    except PdppError as exc:
        if isinstance(exc, StageError):
            raise
        raise StageError(stage, exc) from exc
    except (ValueError, KeyError, ArithmeticError) as exc:
        raise StageError(stage, exc) from exc
    return _RunResult(metrics, lists if keep_lists else {}, stats, len(users))


def run_experiment(
    config: ExperimentConfig,
    data: InteractionDataset | None = None,
    catalog: ItemCatalog | None = None,
    keep_lists: bool = False,
) -> EvalReport:
    """Run the grid ``config.runs`` times with seeds ``seed, seed+1, ...`` and aggregate."""
    t0 = time.time()
    try:
        if catalog is None:
            catalog, _ = read_catalog(config.movies_path)
        if data is None:
            data = read_ratings(config.ratings_path, config.positivity_threshold)
    except PdppError as exc:
        raise StageError("load", exc) from exc

    results = [_run_once(data, catalog, config, config.seed + r, keep_lists) for r in range(config.runs)]

    rows = []
    for m in config.grid:
        ps = [res.metrics[m.name][0] for res in results]
        ils = [res.metrics[m.name][1] for res in results]
        ild = None if any(v is None for v in ils) else float(np.mean(ils))
        rows.append(
            ModelRow(
                name=m.name,
                precision=float(np.mean(ps)),
                ild=ild,
                precision_std=float(np.std(ps)),
                ild_std=0.0 if ild is None else float(np.std(ils)),
            )
        )
    if len(rows) >= 2 and all(r.ild is not None for r in rows):
        avgs = avg_standardized({r.name: (r.precision, r.ild) for r in rows})
        for r in rows:
            r.avg = avgs[r.name]

    if config.impressions_path and config.downloads_path:
        dr, ad = log_metrics(read_log(config.impressions_path), read_log(config.downloads_path))
        for r in rows:
            r.dr, r.ad = dr, ad

    metadata = {
        "config": config.to_dict(),
        "seed": config.seed,
        "seeds": [config.seed + r for r in range(config.runs)],
        "dataset_hash": _frame_hash(data.frame),
        "users_evaluated": results[0].users,
        "started_at": t0,
        "elapsed_s": round(time.time() - t0, 3),
    }
    return EvalReport(config.k, rows, metadata, results[0].entropy, results[0].lists)


def write_report(report: EvalReport, outdir) -> dict[str, Path]:
    """Write report.json, report.csv and entropy_hist.csv; every file echoes the config."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    config_line = "# config: " + json.dumps(report.metadata.get("config", {}), sort_keys=True)
    paths = {"json": outdir / "report.json", "csv": outdir / "report.csv", "hist": outdir / "entropy_hist.csv"}

    paths["json"].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")

    k = report.k
    frame = pd.DataFrame(
        [
            {
                "model": r.name,
                f"P@{k}": r.precision,
                f"ILD@{k}": r.ild,
                f"avg(P@{k},ILD@{k})": r.avg,
                f"P@{k}_std": r.precision_std,
                f"ILD@{k}_std": r.ild_std,
                "DR": r.dr,
                "AD": r.ad,
            }
            for r in report.rows
        ]
    )
    paths["csv"].write_text(config_line + "\n" + frame.to_csv(index=False))

    stats = report.entropy or EntropyStats(0.0, 0.0, 0)
    write_entropy_histogram(paths["hist"], stats, header=config_line)
    return paths


def write_entropy_histogram(path, stats: EntropyStats, header: str = ""):
    lines = ([header] if header else []) + ["bin_left,bin_right,count"]
    for left, right, c in zip(stats.hist_edges[:-1], stats.hist_edges[1:], stats.hist_counts):
        lines.append(f"{left!r},{right!r},{c}")
    Path(path).write_text("\n".join(lines) + "\n")

