import json

import numpy as np
import pandas as pd
import pytest

from pdpp.datasets import InteractionDataset
from pdpp.errors import ConfigurationError
from pdpp.evaluation import (
    ExperimentConfig,
    ModelSpec,
    StageError,
    avg_standardized,
    filter_sparse,
    ild_at_k,
    log_metrics,
    precision_at_k,
    preprocess_split,
    read_log,
    run_experiment,
    write_report,
)
from pdpp.similarity import ItemCatalog, build_genre_similarity
from pdpp.synthetic import make_corpus


@pytest.fixture(scope="module")
def corpus():
    return make_corpus(n_users=150, n_items=120, seed=3)


# precision


def test_precision_micro_average():
    recs = {"u1": list("abcde"), "u2": list("fghij")}
    truth = {"u1": {"a", "c", "z"}, "u2": {"j"}}
    assert precision_at_k(recs, truth, 5) == pytest.approx(0.3, abs=1e-15)


def test_precision_bounds():
    recs = {"u": list("abc")}
    assert precision_at_k(recs, {"u": set("abc")}, 3) == 1.0
    assert precision_at_k(recs, {"u": {"x"}}, 3) == 0.0


def test_precision_skips_users_without_truth():
    recs = {"u": ["a"], "ghost": ["a"]}
    assert precision_at_k(recs, {"u": {"a"}}, 1) == 1.0


# ILD


def _matrix(pairs):
    return lambda a, b: 1.0 if a == b else pairs.get(frozenset((a, b)), 0.0)


def test_ild_identical_items():
    assert ild_at_k({"u": list("abc")}, lambda a, b: 1.0, 3) == 0.0


def test_ild_fully_diverse():
    assert ild_at_k({"u": list("abc")}, _matrix({}), 3) == 1.0


def test_ild_three_items():
    S = _matrix({frozenset("ab"): 1.0})
    assert ild_at_k({"u": list("abc")}, S, 3) == pytest.approx(2 / 3, abs=1e-15)


def test_ild_k1_undefined():
    assert ild_at_k({"u": ["a"]}, _matrix({}), 1) is None


def test_ild_ordered_pairs_agree(rng):
    cat = ItemCatalog.from_pairs((str(i), {f"g{g}" for g in rng.choice(5, 2)}) for i in range(30))
    S = build_genre_similarity(cat)
    recs = {f"u{u}": [str(i) for i in rng.choice(30, 5, replace=False)] for u in range(20)}
    ordered = np.mean(
        [np.mean([1 - S.lookup(a, b) for a in r for b in r if a != b]) for r in recs.values()]
    )
    assert ild_at_k(recs, S, 5) == pytest.approx(ordered, abs=1e-15)
    shuffled = dict(reversed(list(recs.items())))
    assert ild_at_k(shuffled, S, 5) == pytest.approx(ild_at_k(recs, S, 5), abs=1e-15)


# standardized average


def test_avg_example():
    out = avg_standardized({"m1": (0.04, 0.5), "m2": (0.02, 0.7)})
    assert out["m1"] == pytest.approx(0.5, abs=1e-12)
    assert out["m2"] == pytest.approx(0.5, abs=1e-12)


def test_avg_extremes():
    out = avg_standardized({"best": (0.05, 0.9), "mid": (0.03, 0.6), "worst": (0.01, 0.2)})
    assert out["best"] == 1.0 and out["worst"] == 0.0


def test_avg_constant_metric():
    out = avg_standardized({"a": (0.1, 0.5), "b": (0.2, 0.5)})
    assert out == {"a": 0.25, "b": 0.75}


def test_avg_single_model():
    with pytest.raises(ValueError):
        avg_standardized({"a": (0.1, 0.5)})


# DR / AD


def test_download_ratio():
    imps = [(f"u{i % 3}", f"i{i}") for i in range(100)]
    downs = imps[:6]
    dr, ad = log_metrics(imps, downs)
    assert dr == pytest.approx(0.06, abs=1e-15)
    assert ad == pytest.approx(2.0, abs=1e-15)


def test_empty_downloads():
    assert log_metrics([("u", "a")], []) == (0.0, 0.0)


def test_no_impressions():
    assert log_metrics([], []) == (None, None)


def test_download_without_impression():
    with pytest.raises(ValueError):
        log_metrics([("u", "a")], [("u", "b")])


def test_read_log_formats(tmp_path):
    a = tmp_path / "a.jsonl"
    a.write_text('{"user_id": 1, "item_id": "x"}\n{"user_id": 2, "item_id": "y"}\n')
    b = tmp_path / "b.csv"
    b.write_text("ts,user_id,item_id\n0,1,x\n1,2,y\n")
    assert read_log(a) == read_log(b) == [("1", "x"), ("2", "y")]


# preprocessing


def test_sparse_users_removed():
    rows = [(f"u{u}", f"i{i}", 5.0, 0) for u in range(12) for i in range(20)]
    rows += [("short", f"i{i}", 5.0, 0) for i in range(19)]
    out = filter_sparse(InteractionDataset.from_records(rows))
    assert "short" not in set(out.frame.user_id)
    assert out.frame.user_id.nunique() == 12


def test_filter_iterates_to_fixpoint():
    # removing the short user drops i20 below 10 raters, which drops u0 below 20 ratings
    rows = [(f"u{u}", f"i{i}", 5.0, 0) for u in range(1, 11) for i in range(20)]
    rows += [("u0", f"i{i}", 5.0, 0) for i in range(19)] + [("u0", "i20", 5.0, 0)]
    rows += [(f"v{v}", "i20", 5.0, 0) for v in range(8)]
    rows += [("v0", f"i{i}", 5.0, 0) for i in range(19)]
    out = filter_sparse(InteractionDataset.from_records(rows))
    assert "i20" not in set(out.frame.item_id)
    assert (out.frame.groupby("user_id").size() >= 20).all()
    assert (out.frame.groupby("item_id").user_id.nunique() >= 10).all()


def test_split_deterministic(corpus):
    data, _ = corpus
    cfg = ExperimentConfig(seed=7)
    a_train, a_test = preprocess_split(data, cfg)
    b_train, b_test = preprocess_split(data, cfg)
    pd.testing.assert_frame_equal(a_train.frame, b_train.frame)
    assert len(a_train) == round(0.7 * (len(a_train) + len(a_test)))
    c_train, _ = preprocess_split(data, ExperimentConfig(seed=8))
    assert not a_train.frame.equals(c_train.frame)


def test_filter_empties_dataset():
    with pytest.raises(ConfigurationError):
        preprocess_split(InteractionDataset.from_records([("u", "i", 5.0, 0)]), ExperimentConfig())


# configuration


@pytest.mark.parametrize(
    "text,name",
    [
        ("BASE", "BASE"),
        ("DPP(0.04)", "DPP(alpha=0.04)"),
        ("dpp(alpha=0.5)", "DPP(alpha=0.5)"),
        ("pDPP(0, 0.02)", "pDPP(l=0,alpha_0=0.02)"),
        ("pDPP(l=hmin, alpha_0=0.6)", "pDPP(l=hmin,alpha_0=0.6)"),
    ],
)
def test_model_spec_parse(text, name):
    assert ModelSpec.parse(text).name == name
    assert ModelSpec.parse(name).name == name


@pytest.mark.parametrize("text", ["DPP(2)", "pDPP(-1, 0.5)", "MMR(0.3)", "DPP()"])
def test_model_spec_rejects(text):
    with pytest.raises(ConfigurationError):
        ModelSpec.parse(text)


def test_config_text_round_trip():
    cfg = ExperimentConfig.from_mapping({"grid": "BASE; DPP(0.02), pDPP(0, 0.5)", "k": "10", "seed": "3"})
    again = ExperimentConfig.from_text(cfg.to_text())
    assert again == cfg
    assert [m.name for m in again.grid] == ["BASE", "DPP(alpha=0.02)", "pDPP(l=0,alpha_0=0.5)"]


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ExperimentConfig(split_ratio=1.0)
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_text("colour = red\n")


# experiment


def _run(corpus, grid, **kw):
    data, catalog = corpus
    cfg = ExperimentConfig.from_mapping({"grid": grid, "seed": 1, **kw})
    return run_experiment(cfg, data, catalog, keep_lists=True)


def test_base_lists_follow_scores(corpus):
    report = _run(corpus, "BASE")
    lists = report.lists["BASE"]
    assert len(lists) == report.metadata["users_evaluated"] > 0
    assert all(len(v) == 5 and len(set(v)) == 5 for v in lists.values())


def test_dpp_alpha_zero_equals_base(corpus):
    report = _run(corpus, "BASE; DPP(0)")
    assert report.lists["BASE"] == report.lists["DPP(alpha=0)"]
    base, dpp = report.rows
    assert (base.precision, base.ild) == (dpp.precision, dpp.ild)


def test_base_row_isolated_from_grid(corpus):
    a = _run(corpus, "BASE; DPP(0.1)").row("BASE")
    b = _run(corpus, "BASE; DPP(0.9); pDPP(0, 0.5)").row("BASE")
    assert (a.precision, a.ild) == (b.precision, b.ild)


def test_diversity_rises_with_alpha(corpus):
    report = _run(corpus, "BASE; DPP(0.9)")
    assert report.row("DPP(alpha=0.9)").ild > report.row("BASE").ild


def test_large_offset_matches_plain_dpp(corpus):
    report = _run(corpus, "DPP(0.6); pDPP(1000000, 0.6)")
    d, p = report.rows
    assert p.precision == pytest.approx(d.precision, abs=1e-9)
    assert p.ild == pytest.approx(d.ild, abs=1e-9)


def test_multiple_runs_aggregate(corpus):
    report = _run(corpus, "BASE; DPP(0.5)", runs=2)
    assert report.metadata["seeds"] == [1, 2]
    assert all(0.0 <= r.precision <= 1.0 and 0.0 <= r.ild <= 1.0 for r in report.rows)
    assert all(0.0 <= r.avg <= 1.0 for r in report.rows)


def test_stage_tagged_failure(corpus):
    data, catalog = corpus
    cfg = ExperimentConfig(min_user_ratings=10_000)
    with pytest.raises(StageError, match=r"\[preprocess\]"):
        run_experiment(cfg, data, catalog)


def test_logged_feedback_columns(corpus, tmp_path):
    imps = tmp_path / "imp.csv"
    imps.write_text("user_id,item_id\n" + "".join(f"u{i % 4},i{i}\n" for i in range(50)))
    downs = tmp_path / "down.csv"
    downs.write_text("user_id,item_id\nu0,i0\nu1,i1\n")
    report = _run(corpus, "BASE; DPP(0.3)", impressions_path=str(imps), downloads_path=str(downs))
    assert report.rows[0].dr == pytest.approx(0.04) and report.rows[0].ad == pytest.approx(0.5)


def test_report_files(corpus, tmp_path):
    report = _run(corpus, "BASE; pDPP(0, 0.5)")
    paths = write_report(report, tmp_path)
    csv_lines = paths["csv"].read_text().splitlines()
    assert csv_lines[0].startswith("# config: ")
    assert len(csv_lines) == 2 + 2
    blob = json.loads(paths["json"].read_text())
    assert blob["metadata"]["config"]["grid"] == ["BASE", "pDPP(l=0,alpha_0=0.5)"]
    assert blob["entropy"]["h_min"] <= blob["entropy"]["h_max"]
    hist = paths["hist"].read_text().splitlines()
    assert hist[1] == "bin_left,bin_right,count"
    assert sum(int(line.split(",")[2]) for line in hist[2:]) == report.entropy.population_size
