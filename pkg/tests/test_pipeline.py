from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from hybrid_nids import pipeline
from hybrid_nids.config import config_from_dict
from hybrid_nids.errors import StageError
from hybrid_nids.evaluation import FoldSpec, run_cv
from hybrid_nids.learners import learner_spec
from hybrid_nids.storage import sha256_file
from hybrid_nids.synth import generate_synthetic, to_csv

FAST = {
    "boost": {"n_rounds": 5, "max_depth": 3},
    "selection": {"threshold": 0.95, "fast": True, "learners": ["dt", "knn"]},
    "folds": {"n_folds": 3},
    "evaluate": {"learners": ["rf", "dt", "knn", "ann"], "feature_sets": ["all", "selected", "proposed"]},
    "learners": {"rf": {"n_trees": 5}, "ann": {"epochs": 5}, "mlp": {"epochs": 5}},
}


def make_cfg(path, out, **extra):
    data = json.loads(json.dumps(FAST))
    data.update(output_dir=str(out), dataset={"kind": "generic", "path": str(path)})
    for key, value in extra.items():
        section, _, field = key.partition("__")
        if field:
            data.setdefault(section, {})[field] = value
        else:
            data[key] = value
    return config_from_dict(data)


@pytest.fixture
def synth_csv(tmp_path):
    path = tmp_path / "synth.csv"
    to_csv(generate_synthetic([120, 40], 2, 3, seed=2), path)
    return path


# ---------------------------------------------------------------- generator


def test_synthetic_separable_rf():
    data = generate_synthetic([500, 500], 3, 7, seed=0)
    res = run_cv(data, learner_spec("rf", n_trees=30), spec=FoldSpec(10))
    assert res.mean_row().accuracy >= 0.99


def test_synthetic_without_noise_ranks_informative(tmp_path):
    from hybrid_nids.boost import GBConfig, feature_importance, train_boosted

    data = generate_synthetic([100, 100], 3, 0, seed=1)
    ranking = feature_importance(train_boosted(data, GBConfig(n_rounds=5)), data.feature_names)
    assert all(name.startswith("inf_") for name in ranking.feature_names)
    assert ranking.gains[0] > 0


def test_synthetic_files_identical(tmp_path):
    for name in ("a.csv", "b.csv"):
        to_csv(generate_synthetic([30, 20, 10], 2, 2, seed=9), tmp_path / name)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_synthetic_csv_reloads_exactly(tmp_path):
    from hybrid_nids.ingest import load_csv, prepare

    data = generate_synthetic([20, 20], 2, 1, seed=4)
    to_csv(data, tmp_path / "s.csv")
    again, _ = prepare(load_csv(tmp_path / "s.csv", "generic"))
    assert np.array_equal(again.x, data.x) and np.array_equal(again.y, data.y)


def test_synthetic_rejects_bad_spec():
    with pytest.raises(ValueError):
        generate_synthetic([10], 2)
    with pytest.raises(ValueError):
        generate_synthetic([10, 10], 0)


# ---------------------------------------------------------------- pipeline


def test_run_pipeline_artifacts(synth_csv, tmp_path):
    out = tmp_path / "out"
    report = pipeline.run_pipeline(make_cfg(synth_csv, out))
    for name in ("prepared.npz", "prepared.json", "balanced.json", "ranking.json", "selection.json",
                 "selection.csv", "metrics.csv", "manifest.json", "confusion_rf.csv", "roc_knn.csv"):
        assert (out / name).exists(), name
    assert not (out / ".lock").exists()
    manifest = report.manifest
    for rel, digest in manifest["files"].items():
        assert sha256_file(out / rel) == digest
    listed = set(manifest["files"]) | {"manifest.json", "timings.json"}
    assert {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file()} == listed
    assert pipeline.manifest_digest(manifest) == manifest["digest"]
    balanced = json.loads((out / "balanced.json").read_text())
    assert balanced["counts_after"] == [120, 120]
    assert len(report.mean) == 12


def test_metrics_csv_shape(synth_csv, tmp_path):
    out = tmp_path / "out"
    pipeline.run_pipeline(make_cfg(synth_csv, out))
    rows = list(csv.DictReader(open(out / "metrics.csv")))
    assert len(rows) == 3 * 4 * (3 + 1)
    for r in rows:
        for f in ("accuracy", "precision", "recall", "f1", "mae", "mse", "rmse"):
            assert 0.0 <= float(r[f]) <= 100.0
    conf = list(csv.DictReader(open(out / "confusion_dt.csv")))
    for fs in ("all", "selected", "proposed"):
        assert sum(float(r["percent"]) for r in conf if r["feature_set"] == fs) == pytest.approx(100, abs=1e-4)


def test_staged_equals_single_run(synth_csv, tmp_path):
    one, staged = tmp_path / "one", tmp_path / "staged"
    pipeline.run_pipeline(make_cfg(synth_csv, one))
    cfg = make_cfg(synth_csv, staged)
    for stage in pipeline.STAGES:
        pipeline.STAGE_FUNCS[stage](cfg, staged)
    assert (one / "metrics.csv").read_bytes() == (staged / "metrics.csv").read_bytes()
    a = json.loads((one / "manifest.json").read_text())
    b = json.loads((staged / "manifest.json").read_text())
    assert a["digest"] == b["digest"]


def test_report_is_idempotent_without_retraining(synth_csv, tmp_path):
    out = tmp_path / "out"
    cfg = make_cfg(synth_csv, out)
    pipeline.run_pipeline(cfg)
    first = (out / "metrics.csv").read_bytes()
    (out / "prepared.npz").unlink()  # nothing upstream is needed to report
    pipeline.stage_report(cfg, out)
    assert (out / "metrics.csv").read_bytes() == first


def test_ordering_errors(synth_csv, tmp_path):
    cfg = make_cfg(synth_csv, tmp_path / "o")
    with pytest.raises(StageError, match="run rank first"):
        pipeline.stage_select(cfg, tmp_path / "o")
    with pytest.raises(StageError, match="run evaluate first"):
        pipeline.stage_report(cfg, tmp_path / "o")


def test_upstream_change_detected(synth_csv, tmp_path):
    out = tmp_path / "o"
    cfg = make_cfg(synth_csv, out)
    for stage in ("ingest", "balance", "rank"):
        pipeline.STAGE_FUNCS[stage](cfg, out)
    pipeline.stage_ingest(make_cfg(synth_csv, out, seed=1, dataset__sample_rows=100), out)
    with pytest.raises(StageError, match="changed"):
        pipeline.stage_select(cfg, out)


def test_lock_rejects_concurrent_use(synth_csv, tmp_path):
    out = tmp_path / "o"
    out.mkdir()
    (out / ".lock").write_text("123")
    with pytest.raises(StageError, match="in use"):
        pipeline.stage_ingest(make_cfg(synth_csv, out), out)


def test_failure_marks_stale(tmp_path):
    out = tmp_path / "o"
    cfg = make_cfg(tmp_path / "missing.csv", out)
    with pytest.raises(StageError) as err:
        pipeline.run_pipeline(cfg)
    assert err.value.stage == "ingest" and err.value.exit_code == 3
    assert json.loads((out / "STALE").read_text())["stage"] == "ingest"


def test_balanced_input_skips_smote(malmem_file, tmp_path):
    out = tmp_path / "o"
    cfg = config_from_dict({**json.loads(json.dumps(FAST)), "output_dir": str(out),
                            "dataset": {"kind": "malmem", "path": str(malmem_file)},
                            "folds": {"n_folds": 2}, "selection": {"fixed_k": 3}})
    pipeline.stage_ingest(cfg, out)
    side = pipeline.stage_balance(cfg, out)
    assert side["skipped"] and side["notice"] == "balanced, skipped (6 vs 6)"
    assert not (out / "balanced.npz").exists()


def test_rank_on_kdd_lists_every_feature(kdd_file, tmp_path):
    out = tmp_path / "o"
    cfg = config_from_dict({"output_dir": str(out), "task": "multilabel",
                            "dataset": {"kind": "kdd", "path": str(kdd_file)},
                            "smote": {"enabled": False}, "boost": {"n_rounds": 2}})
    pipeline.stage_ingest(cfg, out)
    pipeline.stage_balance(cfg, out)
    ranking = pipeline.stage_rank(cfg, out)
    assert len(json.loads((out / "ranking.json").read_text())["ranking"]["entries"]) == 41 == len(ranking)


def test_fixed_k_and_train_only_scope(synth_csv, tmp_path):
    out = tmp_path / "o"
    cfg = make_cfg(synth_csv, out, selection__fixed_k=2, folds__scope="train-only-smote")
    report = pipeline.run_pipeline(cfg)
    sel = json.loads((out / "selection.json").read_text())
    assert sel["mode"] == "fixed" and sel["chosen_k"] == 2
    assert json.loads((out / "balanced.json").read_text())["skipped"]
    rows = list(csv.DictReader(open(out / "metrics.csv")))
    assert {r["scope"] for r in rows} == {"train-only-smote"}
    assert report.manifest["levers"]["scope"] == "train-only-smote"


def test_saved_models_predict(synth_csv, tmp_path):
    from hybrid_nids.learners import model_from_dict

    out = tmp_path / "o"
    pipeline.run_pipeline(make_cfg(synth_csv, out))
    doc = json.loads((out / "models" / "rf.json").read_text())
    model = model_from_dict(doc["model"])
    scaled, _, _ = pipeline.load_prepared(out)
    pred = model.predict(scaled.x[:, list(model.features)])
    assert np.mean(pred == scaled.y) > 0.9


def test_scalability_written(synth_csv, tmp_path):
    out = tmp_path / "o"
    pipeline.run_pipeline(make_cfg(synth_csv, out, scalability__enabled=True, scalability__epochs=[2, 4]))
    doc = json.loads((out / "scalability.json").read_text())
    assert doc["epochs"] == [2, 4] and "max_delta_pp" in doc
