import csv
import json

import pytest
from click.testing import CliRunner

from pdpp.cli import main
from pdpp.synthetic import make_corpus, write_movielens


@pytest.fixture(scope="module")
def ml(tmp_path_factory):
    d = tmp_path_factory.mktemp("ml")
    data, catalog = make_corpus(n_users=120, n_items=100, seed=5)
    ratings, movies = write_movielens(d, data, catalog)
    return data, catalog, ratings, movies


def run(*args):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)


@pytest.mark.parametrize("cmd", ["ingest", "init-alpha", "evaluate", "rerank-file", "serve"])
def test_help_lists_defaults(cmd):
    res = run(cmd, "--help")
    assert res.exit_code == 0
    assert "--" in res.output
    if cmd != "ingest":
        assert "default" in res.output


def test_ingest(ml, tmp_path):
    data, catalog, ratings, movies = ml
    res = run("ingest", "--ratings", ratings, "--movies", movies, "--out", tmp_path)
    assert res.exit_code == 0
    summary = json.loads((tmp_path / "ingest.json").read_text())
    assert summary["ratings"] == len(data) and summary["items"] == len(catalog)
    assert (tmp_path / "catalog.tsv").exists() and (tmp_path / "ratings.csv").exists()


def test_init_alpha_covers_users_with_history(ml, tmp_path):
    data, _, ratings, movies = ml
    res = run("init-alpha", "--ratings", ratings, "--movies", movies, "--interactions", "all", "--out", tmp_path)
    assert res.exit_code == 0, res.output
    lines = (tmp_path / "alpha_snapshot.csv").read_text().splitlines()
    assert lines[0].startswith("# config: ")
    assert len(lines) - 2 == data.frame.user_id.nunique()
    stats = json.loads((tmp_path / "entropy_stats.json").read_text())
    assert stats["config"]["interactions"] == "all"
    assert (tmp_path / "entropy_hist.csv").read_text().startswith("# config: ")


def test_init_alpha_hmin_offset(ml, tmp_path):
    _, _, ratings, movies = ml
    res = run("init-alpha", "--ratings", ratings, "--movies", movies, "--l", "hmin", "--out", tmp_path)
    assert res.exit_code == 0
    stats = json.loads((tmp_path / "entropy_stats.json").read_text())
    assert stats["config"]["l"] == stats["h_min"]


def test_evaluate_two_models(ml, tmp_path):
    _, _, ratings, movies = ml
    res = run("evaluate", "--ratings", ratings, "--movies", movies, "--grid", "BASE; DPP(0.02)", "--out", tmp_path)
    assert res.exit_code == 0, res.output
    rows = [r for r in (tmp_path / "report.csv").read_text().splitlines()[1:] if r]
    assert len(rows) == 1 + 2
    assert "DPP(alpha=0.02)" in res.output
    assert "grid = BASE; DPP(alpha=0.02)" in (tmp_path / "config.txt").read_text()


def test_evaluate_reproducible_from_config(ml, tmp_path):
    _, _, ratings, movies = ml
    a, b = tmp_path / "a", tmp_path / "b"
    run("evaluate", "--ratings", ratings, "--movies", movies, "--grid", "BASE; pDPP(0, 0.5)", "--seed", 4, "--out", a)
    run("evaluate", "--config", a / "config.txt", "--out", b)
    assert (a / "report.csv").read_bytes() == (b / "report.csv").read_bytes()
    assert (a / "entropy_hist.csv").read_bytes() == (b / "entropy_hist.csv").read_bytes()


def test_evaluate_missing_data_fails_with_stage(tmp_path):
    res = run("evaluate", "--out", tmp_path)
    assert res.exit_code == 1
    assert "error [config]" in res.output


def test_evaluate_bad_grid(ml, tmp_path):
    _, _, ratings, movies = ml
    res = run("evaluate", "--ratings", ratings, "--movies", movies, "--grid", "DPP(7)", "--out", tmp_path)
    assert res.exit_code == 1 and "error [config]" in res.output


def _scored(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "item_id", "score"])
        w.writerows(rows)


def _read_out(path):
    with open(path) as fh:
        return [r for r in csv.DictReader(ln for ln in fh if not ln.startswith("#"))]


def test_rerank_file_alpha_zero_keeps_score_order(ml, tmp_path):
    _, catalog, _, movies = ml
    items = catalog.ids[:10]
    rows = [("u1", i, 1.0 - n / 20) for n, i in enumerate(reversed(items))]
    rows += [("u2", i, 0.1 + n / 20) for n, i in enumerate(items)]
    inp, out = tmp_path / "in.csv", tmp_path / "out.csv"
    _scored(inp, rows)
    res = run("rerank-file", "--input", inp, "--catalog", movies, "--k", 10, "--alpha", 0, "--out", out)
    assert res.exit_code == 0, res.output
    got = _read_out(out)
    assert [r["item_id"] for r in got if r["user_id"] == "u1"] == list(reversed(items))
    assert [r["item_id"] for r in got if r["user_id"] == "u2"] == list(reversed(items))
    assert out.read_text().startswith("# config: ")


def test_rerank_file_with_snapshot(ml, tmp_path):
    _, catalog, ratings, movies = ml
    run("init-alpha", "--ratings", ratings, "--movies", movies, "--out", tmp_path)
    inp, out = tmp_path / "in.csv", tmp_path / "out.csv"
    _scored(inp, [("1", i, 0.5) for i in catalog.ids[:8]] + [("nobody", i, 0.5) for i in catalog.ids[:8]])
    res = run("rerank-file", "--input", inp, "--catalog", movies, "--snapshot", tmp_path / "alpha_snapshot.csv",
              "--alpha-0", 0.4, "--k", 5, "--out", out)
    assert res.exit_code == 0, res.output
    got = _read_out(out)
    assert {r["alpha_used"] for r in got if r["user_id"] == "nobody"} == {"0.4"}
    assert len([r for r in got if r["user_id"] == "1"]) == 5


def test_rerank_file_bad_input(ml, tmp_path):
    _, _, _, movies = ml
    inp = tmp_path / "in.csv"
    inp.write_text("user,thing\n1,2\n")
    res = run("rerank-file", "--input", inp, "--catalog", movies, "--out", tmp_path / "o.csv")
    assert res.exit_code == 1 and "error [rerank-file]" in res.output


def test_ingest_corrupt_file(tmp_path):
    (tmp_path / "r.dat").write_text("garbage\n" * 10)
    (tmp_path / "m.dat").write_text("1::x::A\n")
    res = run("ingest", "--ratings", tmp_path / "r.dat", "--movies", tmp_path / "m.dat", "--out", tmp_path / "o")
    assert res.exit_code == 1 and "error [ingest]" in res.output


def test_rerank_file_through_service(ml, tmp_path, monkeypatch):
    import httpx
    from fastapi.testclient import TestClient

    from pdpp.service import ServiceSettings, create_app

    _, catalog, _, movies = ml
    client = TestClient(create_app(settings=ServiceSettings(catalog_path=str(movies), alpha_0=0.3)))
    monkeypatch.setattr(httpx, "post", lambda url, json, timeout: client.post("/rerank", json=json))
    inp, local, remote = tmp_path / "in.csv", tmp_path / "local.csv", tmp_path / "remote.csv"
    _scored(inp, [("u9", i, 1.0 / (n + 1)) for n, i in enumerate(catalog.ids[:15])])
    run("rerank-file", "--input", inp, "--catalog", movies, "--alpha-0", 0.3, "--k", 6, "--out", local)
    res = run("rerank-file", "--input", inp, "--catalog", movies, "--url", "http://svc", "--k", 6, "--out", remote)
    assert res.exit_code == 0, res.output
    assert _read_out(local) == _read_out(remote)
