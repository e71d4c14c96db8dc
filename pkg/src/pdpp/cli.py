"""Command line entry point: ``pdpp <subcommand>``."""

from __future__ import annotations

import csv
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

import click

from pdpp.errors import PdppError

logger = logging.getLogger("pdpp")


def _fail(stage: str, exc: Exception):
    click.echo(f"error [{stage}]: {exc}", err=True)
    sys.exit(1)


def _config_comment(**values) -> str:
    return "config: " + json.dumps(values, sort_keys=True, default=str)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose: bool):
    """Personalized DPP re-ranking toolkit."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("--ratings", required=True, type=click.Path(exists=True, dir_okay=False), help="ratings.dat or CSV.")
@click.option("--movies", required=True, type=click.Path(exists=True, dir_okay=False), help="movies.dat catalog.")
@click.option("--threshold", default=4.0, show_default=True, help="Rating at or above which a record is positive.")
@click.option("--out", "outdir", required=True, type=click.Path(file_okay=False), help="Output directory.")
def ingest(ratings, movies, threshold, outdir):
    """Parse MovieLens-format files and write a normalized dataset and catalog."""
    from pdpp.datasets import parse_movielens, write_catalog, write_ratings

    try:
        data, catalog = parse_movielens(ratings, movies, threshold)
    except PdppError as exc:
        _fail("ingest", exc)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_ratings(out / "ratings.csv", data)
    write_catalog(out / "catalog.tsv", catalog)
    summary = {
        "config": {"ratings": str(ratings), "movies": str(movies), "threshold": threshold},
        "ratings": len(data),
        "users": int(data.frame["user_id"].nunique()),
        "items": len(catalog),
        "malformed_ratings": data.malformed,
    }
    (out / "ingest.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    click.echo(f"{len(data)} ratings, {summary['users']} users, {len(catalog)} items -> {out}")


@main.command("init-alpha")
@click.option("--ratings", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--movies", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--alpha-0", "alpha_0", default=0.6, show_default=True, help="Shared trade-off alpha_0.")
@click.option("--l", "l_offset", default="0", show_default=True, help="Normalization offset in nats, or 'hmin'.")
@click.option("--cold-start", default=5, show_default=True, help="Minimum interactions for a personalized alpha.")
@click.option("--threshold", default=4.0, show_default=True, help="Positivity threshold for ratings.")
@click.option(
    "--interactions",
    type=click.Choice(["positive", "all"]),
    default="positive",
    show_default=True,
    help="Which ratings count as interactions for the genre entropy.",
)
@click.option("--bins", default=20, show_default=True, help="Entropy histogram bins.")
@click.option("--out", "outdir", required=True, type=click.Path(file_okay=False))
def init_alpha_cmd(ratings, movies, alpha_0, l_offset, cold_start, threshold, interactions, bins, outdir):
    """Offline alpha initializer: entropy stats, alpha snapshot and profiles."""
    from pdpp.datasets import parse_movielens
    from pdpp.evaluation import write_entropy_histogram
    from pdpp.personalization import (
        PersonalizationParams,
        build_profiles,
        compute_population_stats,
        init_alpha,
        save_profiles,
        write_alpha_snapshot,
    )

    try:
        data, catalog = parse_movielens(ratings, movies, threshold)
        frame = data.positives() if interactions == "positive" else data.frame
        profiles = build_profiles(zip(frame["user_id"], frame["item_id"]), catalog)
        if str(l_offset).lower() in ("hmin", "h_min"):
            l_val = compute_population_stats(profiles.values(), cold_start).h_min
        else:
            l_val = float(l_offset)
        params = PersonalizationParams(alpha_0, l_val, cold_start)
        stats, records = init_alpha(profiles, params, bins)
    except (PdppError, ValueError) as exc:
        _fail("init-alpha", exc)

    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    comment = _config_comment(
        ratings=ratings, movies=movies, alpha_0=alpha_0, l=l_val, cold_start=cold_start,
        threshold=threshold, interactions=interactions,
    )
    n = write_alpha_snapshot(out / "alpha_snapshot.csv", records.values(), comment=comment)
    save_profiles(out / "profiles.json", profiles)
    (out / "entropy_stats.json").write_text(
        json.dumps(
            {"h_min": stats.h_min, "h_max": stats.h_max, "population_size": stats.population_size,
             "config": json.loads(comment[len("config: "):])},
            indent=2, sort_keys=True,
        ) + "\n"
    )
    write_entropy_histogram(out / "entropy_hist.csv", stats, header="# " + comment)
    click.echo(f"{n} users in snapshot; H in [{stats.h_min:.4f}, {stats.h_max:.4f}] nats -> {out}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="key = value config file.")
@click.option("--ratings", help="ratings.dat path (overrides config).")
@click.option("--movies", help="movies.dat path (overrides config).")
@click.option("--k", type=int, help="List length.  [default: 5]")
@click.option("--split", type=float, help="Training fraction.  [default: 0.7]")
@click.option("--threshold", type=float, help="Positivity threshold.  [default: 4]")
@click.option("--grid", help="Models, e.g. 'BASE; DPP(0.04); pDPP(0, 0.02); pDPP(hmin, 0.02)'.  [default: BASE + DPP(0.01..0.1)]")
@click.option("--seed", type=int, help="Split seed.  [default: 0]")
@click.option("--runs", type=int, help="Repetitions with seeds seed, seed+1, ...  [default: 1]")
@click.option("--max-users", type=int, help="Evaluate a random subset of test users (0 = all).  [default: 0]")
@click.option("--out", "outdir", required=True, type=click.Path(file_okay=False))
def evaluate(config_path, ratings, movies, k, split, threshold, grid, seed, runs, max_users, outdir):
    """Run the offline protocol and write report.json, report.csv, entropy_hist.csv."""
    from pdpp.evaluation import DEFAULT_ALPHA_GRID, ExperimentConfig, run_experiment, write_report

    values: dict = {}
    if config_path:
        try:
            base = ExperimentConfig.load(config_path)
        except PdppError as exc:
            _fail("config", exc)
        values.update(base.to_dict())
    else:
        values["grid"] = ["BASE"] + [f"DPP({a})" for a in DEFAULT_ALPHA_GRID]
    overrides = {
        "ratings_path": ratings, "movies_path": movies, "k": k, "split_ratio": split,
        "positivity_threshold": threshold, "grid": grid, "seed": seed, "runs": runs, "max_users": max_users,
    }
    values.update({key: v for key, v in overrides.items() if v is not None})
    try:
        config = ExperimentConfig.from_mapping(values)
    except PdppError as exc:
        _fail("config", exc)
    if not config.ratings_path or not config.movies_path:
        _fail("config", ValueError("--ratings and --movies (or a config file naming them) are required"))
    try:
        report = run_experiment(config)
    except PdppError as exc:
        _fail("evaluate", exc)
    write_report(report, outdir)
    (Path(outdir) / "config.txt").write_text(config.to_text())
    click.echo(report.table())


def _read_scored(path):
    groups: dict[str, list[tuple[str, float]]] = defaultdict(list)
    with open(path, newline="") as fh:
        for row in csv.DictReader(line for line in fh if not line.startswith("#")):
            groups[row["user_id"]].append((row["item_id"], float(row["score"])))
    return groups


@main.command("rerank-file")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="CSV with header user_id,item_id,score.")
@click.option("--catalog", required=True, type=click.Path(exists=True, dir_okay=False), help="movies.dat catalog.")
@click.option("--k", default=5, show_default=True)
@click.option("--alpha", type=float, default=None, help="Fixed alpha for every user (plain DPP).")
@click.option("--snapshot", type=click.Path(exists=True, dir_okay=False), help="Alpha snapshot for pDPP.")
@click.option("--alpha-0", "alpha_0", default=0.6, show_default=True, help="alpha for users missing from the snapshot.")
@click.option("--url", default=None, help="Send batches to a running service instead of re-ranking locally.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def rerank_file(input_path, catalog, k, alpha, snapshot, alpha_0, url, out_path):
    """Re-rank a scored candidate file, one list per user."""
    from pdpp.datasets import read_catalog
    from pdpp.personalization import PersonalizationParams
    from pdpp.service.state import RerankService

    try:
        groups = _read_scored(input_path)
    except (OSError, KeyError, ValueError) as exc:
        _fail("rerank-file", exc)

    if url:
        import httpx

        def run(user, cands):
            body = {"user_id": user, "k": k, "candidates": [{"item_id": i, "score": s} for i, s in cands]}
            r = httpx.post(url.rstrip("/") + "/rerank", json=body, timeout=30)
            r.raise_for_status()
            return r.json()["items"], r.json()["alpha_used"]
    else:
        try:
            cat, _ = read_catalog(catalog)
            service = RerankService(cat, PersonalizationParams(alpha_0 if alpha is None else alpha))
            if snapshot and alpha is None:
                service.rebuild_index(snapshot)
        except PdppError as exc:
            _fail("rerank-file", exc)

        def run(user, cands):
            res = service.rerank(user, cands, k)
            return res.items, res.alpha_used

    comment = _config_comment(input=input_path, catalog=catalog, k=k, alpha=alpha, snapshot=snapshot, alpha_0=alpha_0)
    with open(out_path, "w", newline="") as fh:
        fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(["user_id", "rank", "item_id", "alpha_used"])
        for user, cands in groups.items():
            items, used = run(user, cands)
            for rank, item in enumerate(items, start=1):
                w.writerow([user, rank, item, used])
    click.echo(f"re-ranked {len(groups)} user list(s) -> {out_path}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, envvar="PDPP_PORT")
@click.option("--alpha-0", "alpha_0", default=0.6, show_default=True, envvar="PDPP_ALPHA_0")
@click.option("--l", "l_offset", default=0.0, show_default=True, envvar="PDPP_L")
@click.option("--cold-start", default=5, show_default=True, envvar="PDPP_COLD_START")
@click.option("--catalog", required=True, envvar="PDPP_CATALOG", type=click.Path(exists=True, dir_okay=False))
@click.option("--snapshot", default="", envvar="PDPP_SNAPSHOT", help="Alpha snapshot CSV.")
@click.option("--profiles", default="", envvar="PDPP_PROFILES", help="Profiles JSON from init-alpha.")
@click.option("--workers", default=1, show_default=True, envvar="PDPP_WORKERS",
              help="Worker processes; each holds its own alpha index, so nearline events only reach one worker.")
def serve(host, port, alpha_0, l_offset, cold_start, catalog, snapshot, profiles, workers):
    """Start the HTTP re-ranking service."""
    import os

    import uvicorn

    from pdpp.service import ServiceSettings, create_app

    settings = ServiceSettings(
        host=host, port=port, alpha_0=alpha_0, l=l_offset, cold_start_min_interactions=cold_start,
        catalog_path=catalog, snapshot_path=snapshot, profiles_path=profiles,
    )
    try:
        app = create_app(settings=settings)
    except (PdppError, OSError) as exc:
        _fail("serve", exc)
    if workers <= 1:
        uvicorn.run(app, host=host, port=port, log_level="warning")
        return
    # worker processes rebuild the app from the environment
    os.environ.update({
        "PDPP_ALPHA_0": str(alpha_0), "PDPP_L": str(l_offset), "PDPP_COLD_START": str(cold_start),
        "PDPP_CATALOG": str(catalog), "PDPP_SNAPSHOT": str(snapshot), "PDPP_PROFILES": str(profiles),
    })
    uvicorn.run("pdpp.service.app:app_from_env", factory=True, host=host, port=port,
                workers=workers, log_level="warning")


if __name__ == "__main__":
    main()
