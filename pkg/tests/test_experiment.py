import json
from pathlib import Path

import numpy as np
import pytest

from conftest import write_full_schema_csv
from txanomaly.config import parse_config
from txanomaly.dataset import REDUCED_SCHEMA, gen_synthetic
from txanomaly.experiment import (
    FeatureMismatchError,
    StageError,
    align_features,
    detect_schema,
    prepare,
    run_experiment,
    select_instances,
    sha256_file,
)
from txanomaly.seeding import derive_seed

LIGHT_MODELS = [
    {"kind": "dt", "params": {"max_depth": 6}},
    {"kind": "rf", "params": {"n_trees": 8, "max_depth": 5}},
    {"kind": "gb", "params": {"n_stages": 10}},
    {"kind": "xgb", "params": {"n_stages": 10}},
    {"kind": "adb", "params": {"n_rounds": 10}},
    {"kind": "stacked", "folds": 3, "bases": [{"kind": "dt", "params": {"max_depth": 4}}, "lr"]},
    {"kind": "voting", "members": [{"kind": "dt", "params": {"max_depth": 4}}, "lr", "adb"], "mode": "hard"},
]
LIGHT_XGBCLUS = {"xgbclus": {"learner": {"n_stages": 5, "max_depth": 2}}}


def _config(**over):
    raw = {
        "input": {"synthetic": {"n_major": 300, "n_minor": 30, "separation": 3.0}},
        "samplers": ["none", "rus"],
        "models": ["dt"],
        "seed": 3,
        "sampler_params": LIGHT_XGBCLUS,
    }
    raw.update(over)
    return parse_config(raw)


def _manifest(out: Path) -> dict:
    return json.loads((out / "manifest.json").read_text())


def test_seed_derivation_is_path_keyed():
    assert derive_seed(7, "sampler", "rus") == derive_seed(7, "sampler", "rus")
    assert derive_seed(7, "sampler", "rus") != derive_seed(7, "sampler", "smote")
    assert derive_seed(7, "sampler", "rus") != derive_seed(8, "sampler", "rus")


def test_detect_schema(tmp_path):
    assert detect_schema(write_full_schema_csv(tmp_path / "f.csv"))[1] == "outdegree"
    p = tmp_path / "x.csv"
    p.write_text("a,b,out_and_tx_malicious\n1,2,0\n")
    with pytest.raises(Exception, match="neither"):
        detect_schema(p)
    assert detect_schema(p, strict=False) == ("a", "b", "out_and_tx_malicious")


def test_prepare_policy(tmp_path):
    from txanomaly.experiment import load_any

    raw = load_any(write_full_schema_csv(tmp_path / "f.csv", 300, 30, duplicates=5))
    p = prepare(raw)
    assert p.data.feature_names + (p.data.label_name,) == REDUCED_SCHEMA
    assert len(p.data) == 330 and p.source_rows == 335
    assert [r.feature for r in p.ttest][1] == "outdegree"
    capped = prepare(raw, keep_negatives=100, seed=1).data
    assert capped.n_negative == 100 and capped.n_positive == 30


def test_align_features():
    d = gen_synthetic(20, 5, 1.0, 0)
    names = d.feature_names[::-1]
    back = align_features(d, names)
    assert back.feature_names == names and np.array_equal(back.X[:, 0], d.X[:, -1])
    with pytest.raises(FeatureMismatchError):
        align_features(d, names[1:])


def test_select_instances():
    d = gen_synthetic(20, 5, 1.0, 0)
    rows = select_instances(d, 2, 1, None)
    assert len(rows) == 3 and sum(d.y[rows]) == 2
    with pytest.raises(IndexError):
        select_instances(d, 1, 1, [99])


def test_outputs_and_manifest(tmp_path):
    cfg = _config(samplers=["none", "xgbclus"], models=["dt", "lr"],
                  shap={"enabled": True, "background": 20, "positives": 1, "negatives": 1},
                  rules={"enabled": True, "max_depth": 4, "min_support": 1, "min_confidence": 0.5})
    out = tmp_path / "run"
    run_experiment(cfg, out)
    m = _manifest(out)
    assert m["complete"] and m["config_hash"] == cfg.digest()
    assert [s["name"] for s in m["stages"]] == ["prepare", "sample", "train_evaluate", "explain", "rules"]
    listed = {a["path"]: a for a in m["artifacts"]}
    on_disk = {str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()} - {"manifest.json"}
    assert set(listed) == on_disk
    for rel, a in listed.items():
        assert sha256_file(out / rel) == a["sha256"]
    for rel in ("metrics.csv", "metrics.json", "grid_tpr.csv", "confusion.json", "xgbclus_trace.json",
                "shap_force.json", "shap_global.csv", "rules.json", "rules.txt", "importances.csv",
                "roc/none__dt.csv", "balance/xgbclus.json", "ttest.csv", "correlation.csv"):
        assert rel in listed, rel
    rows = json.loads((out / "metrics.json").read_text())
    assert [(r["sampler"], r["model"]) for r in rows] == [("none", "dt"), ("none", "lr"),
                                                          ("xgbclus", "dt"), ("xgbclus", "lr")]
    force = json.loads((out / "shap_force.json").read_text())["records"]
    for rec in force:
        assert abs(rec["base_value"] + sum(f["phi"] for f in rec["features"]) - rec["fx"]) <= 1e-6


def test_unbalanced_grid_trend(tmp_path):
    cfg = _config(input={"synthetic": {"n_major": 3000, "n_minor": 10, "separation": 3.0, "seed": 1}},
                  samplers=["none"], models=[{"kind": "dt", "params": {"max_depth": 10}},
                                             {"kind": "rf", "params": {"n_trees": 10}}])
    run_experiment(cfg, tmp_path)
    for r in json.loads((tmp_path / "metrics.json").read_text()):
        assert r["accuracy"] >= 0.99


def test_full_grid_has_49_rows(tmp_path):
    samplers = ["rus", "nearmiss1", "xgbclus", "smote", "adasyn", "smoteenn", "smotetomek"]
    cfg = _config(samplers=samplers, models=LIGHT_MODELS, metrics=["tpr", "fpr"])
    run_experiment(cfg, tmp_path, jobs=2)
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert len(lines) == 1 + 49
    grid = (tmp_path / "grid_tpr.csv").read_text().splitlines()
    assert grid[0] == "model," + ",".join(samplers) and len(grid) == 8


def test_determinism_and_parallel_parity(tmp_path):
    cfg = _config(samplers=["none", "smote", "xgbclus"], models=["dt", {"kind": "rf", "params": {"n_trees": 5}}])
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    run_experiment(cfg, tmp_path / "c", jobs=2)
    for name in ("metrics.csv", "metrics.json", "xgbclus_trace.json"):
        a = (tmp_path / "a" / name).read_bytes()
        assert a == (tmp_path / "b" / name).read_bytes() == (tmp_path / "c" / name).read_bytes()


def test_adding_a_sampler_leaves_others_unchanged(tmp_path):
    run_experiment(_config(samplers=["rus"]), tmp_path / "a")
    run_experiment(_config(samplers=["smote", "rus"]), tmp_path / "b")
    a = json.loads((tmp_path / "a" / "metrics.json").read_text())
    b = [r for r in json.loads((tmp_path / "b" / "metrics.json").read_text()) if r["sampler"] == "rus"]
    assert a == b


def test_failure_marks_manifest_incomplete(tmp_path):
    cfg = _config(input={"path": str(tmp_path / "missing.csv")})
    with pytest.raises(StageError) as info:
        run_experiment(cfg, tmp_path / "out")
    assert info.value.stage == "prepare"
    m = _manifest(tmp_path / "out")
    assert not m["complete"]
    assert m["stages"][0]["status"] == "failed"
    assert [a["path"] for a in m["artifacts"]] == ["config.json"]
