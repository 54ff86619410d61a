"""Staged pipeline: prepare, balance, rank, select, train, evaluate, report.

Every stage reads its inputs from and writes its outputs to one output
directory, so stages compose through files and can be rerun individually.
Each sidecar records the hashes of the files it was derived from; a stage
refuses to consume an upstream artifact that is missing or out of date.
Wall-clock times go to ``timings.json`` only, keeping every other emitted
file byte-reproducible.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, learners
from .boost import FeatureRanking, feature_importance, train_boosted
from .config import FEATURE_SETS, PipelineConfig
from .errors import NidsError, StageError
from .evaluation import (
    GLOBAL_SMOTE, CVResult, MetricsRow, classification_metrics, confusion, roc_points, run_cv,
    scalability_check, to_percent,
)
from .ingest import ColumnStats, Dataset, load_csv, prepare, scale_dataset, stratified_sample
from .sampler import SmoteConfig, smote
from .selection import Candidate, SelectionResult, search_subsets
from .storage import dump_json, load_arrays, load_json, save_arrays, sha256_file

logger = logging.getLogger(__name__)

STAGES = ("ingest", "balance", "rank", "select", "train", "evaluate", "report")
LOCK = ".lock"
STALE = "STALE"
TIMINGS = "timings.json"
MANIFEST = "manifest.json"
METRIC_FIELDS = ("accuracy", "precision", "recall", "f1", "mae", "mse", "rmse", "auc",
                 "weighted_precision", "weighted_recall", "weighted_f1")
_UNHASHED = {LOCK, STALE, TIMINGS, MANIFEST}


# --------------------------------------------------------------------------- workspace plumbing


_held: set[Path] = set()


@contextmanager
def output_lock(out: Path):
    """Exclusive use of an output directory; re-entrant within one process."""
    out = out.resolve()
    if out in _held:
        yield
        return
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise StageError("lock", f"{out} is in use by another run (delete {lock} if that run is gone)") from None
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    _held.add(out)
    try:
        yield
    finally:
        _held.discard(out)
        lock.unlink(missing_ok=True)


def _update_timings(out: Path, key: str, value) -> None:
    path = out / TIMINGS
    data = load_json(path) if path.exists() else {}
    data[key] = value
    dump_json(data, path)


@contextmanager
def _stage(name: str, out: Path):
    """Lock, time, and translate failures into a stage-tagged error."""
    with output_lock(out):
        t0 = time.perf_counter()
        logger.info("stage %s: start", name)
        try:
            yield
        except NidsError as exc:
            dump_json({"stage": name, "error": str(exc)}, out / STALE)
            if isinstance(exc, StageError):
                raise
            err = StageError(name, str(exc))
            err.exit_code = exc.exit_code
            raise err from exc
        stale = out / STALE
        if stale.exists() and load_json(stale).get("stage") == name:
            stale.unlink()
        _update_timings(out, name, time.perf_counter() - t0)
        logger.info("stage %s: done", name)


def _require(out: Path, filename: str, stage: str) -> Path:
    path = out / filename
    if not path.exists():
        raise StageError(stage, f"{filename} not found in {out}; run {stage} first")
    return path


def _check_upstream(sidecar: dict, out: Path, stage: str) -> None:
    for name, digest in sidecar.get("upstream", {}).items():
        path = out / name
        if not path.exists() or sha256_file(path) != digest:
            raise StageError(stage, f"{name} changed since {stage} ran; run {stage} again")


def _upstream(out: Path, *names: str) -> dict:
    return {n: sha256_file(out / n) for n in names}


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, allow_nan=False).encode()).hexdigest()


# --------------------------------------------------------------------------- loading stage outputs


def load_prepared(out: Path) -> tuple[Dataset, Dataset, dict]:
    """(scaled, unscaled, sidecar) from the ingest stage."""
    side = load_json(_require(out, "prepared.json", "ingest"))
    _check_upstream(side, out, "ingest")
    arr = load_arrays(_require(out, "prepared.npz", "ingest"))
    names, classes = tuple(side["feature_names"]), tuple(side["class_names"])
    stats = ColumnStats.from_dict(side["stats"])
    scaled = Dataset(arr["x"], arr["y"], names, classes, stats=stats)
    raw = Dataset(arr["x_raw"], arr["y"], names, classes)
    return scaled, raw, side


def load_balanced(out: Path) -> tuple[Dataset, dict]:
    """Stage-2 data: the SMOTE output, or the scaled prepared data when skipped."""
    side = load_json(_require(out, "balanced.json", "balance"))
    _check_upstream(side, out, "balance")
    scaled, _, _ = load_prepared(out)
    if side["skipped"]:
        return scaled, side
    arr = load_arrays(_require(out, "balanced.npz", "balance"))
    return Dataset(arr["x"], arr["y"], scaled.feature_names, scaled.class_names, stats=scaled.stats), side


def load_ranking(out: Path) -> FeatureRanking:
    side = load_json(_require(out, "ranking.json", "rank"))
    _check_upstream(side, out, "rank")
    return FeatureRanking.from_dict(side["ranking"])


def load_selection(out: Path) -> tuple[tuple[int, ...], dict]:
    side = load_json(_require(out, "selection.json", "select"))
    _check_upstream(side, out, "select")
    return tuple(side["chosen"]), side


def _ranking_data(cfg: PipelineConfig, out: Path) -> Dataset:
    # leakage-free scope ranks the unbalanced data; SMOTE then happens per fold
    if cfg.folds.scope == GLOBAL_SMOTE:
        return load_balanced(out)[0]
    return load_prepared(out)[0]


def _smote_cfg(cfg: PipelineConfig) -> SmoteConfig | None:
    return SmoteConfig(cfg.smote.k_neighbors, cfg.seed) if cfg.smote.enabled else None


def feature_set_data(cfg: PipelineConfig, out: Path, feature_set: str):
    """(data, features, in-fold SMOTE config) for one evaluated feature set.

    ``all`` and ``selected`` use the data before balancing; ``proposed`` is the
    selected features on balanced data. Under train-only scope the unscaled
    data is handed to cross-validation, which scales and balances per fold.
    """
    if feature_set not in FEATURE_SETS:
        raise StageError("evaluate", f"unknown feature set {feature_set!r}")
    scaled, raw, _ = load_prepared(out)
    features = None
    if feature_set != "all":
        features = load_selection(out)[0]
    if cfg.folds.scope != GLOBAL_SMOTE:
        return raw, features, (_smote_cfg(cfg) if feature_set == "proposed" else None)
    if feature_set == "proposed":
        return load_balanced(out)[0], features, None
    return scaled, features, None


# --------------------------------------------------------------------------- stages


def stage_ingest(cfg: PipelineConfig, out: Path) -> dict:
    with _stage("ingest", out):
        ds = cfg.dataset
        if not ds.path:
            raise StageError("ingest", "dataset.path is not set")
        table = load_csv(ds.path, ds.kind)
        raw_rows = len(table)
        data, meta = prepare(table, cfg.task)
        clean_rows = data.n_rows
        if ds.sample_rows and ds.sample_rows < data.n_rows:
            if ds.stratified:
                data = stratified_sample(data, ds.sample_rows, cfg.seed)
            else:
                data = data.take(np.arange(ds.sample_rows))
        scaled = scale_dataset(data)
        save_arrays(out / "prepared.npz", x=scaled.x, x_raw=data.x, y=data.y)
        side = {
            "schema": ds.kind,
            "task": cfg.task,
            "input_sha256": sha256_file(ds.path),
            "feature_names": list(data.feature_names),
            "class_names": list(data.class_names),
            "label_map": meta["label_map"],
            "category_codes": meta["category_codes"],
            "column_kinds": meta["column_kinds"],
            "stats": scaled.stats.to_dict(),
            "rows": {"raw": raw_rows, "clean": clean_rows, "prepared": data.n_rows},
            "class_counts": data.class_counts().tolist(),
            "levers": {"sample_rows": ds.sample_rows, "stratified": ds.stratified},
            "content_hash": scaled.content_hash(),
        }
        dump_json(side, out / "prepared.json")
        logger.info("ingest: %d raw rows, %d after cleaning, %d prepared", raw_rows, clean_rows, data.n_rows)
    return side


def stage_balance(cfg: PipelineConfig, out: Path) -> dict:
    with _stage("balance", out):
        scaled, _, _ = load_prepared(out)
        counts = scaled.class_counts().tolist()
        side = {"counts_before": counts, "skipped": True, "upstream": _upstream(out, "prepared.npz", "prepared.json")}
        (out / "balanced.npz").unlink(missing_ok=True)
        if not cfg.smote.enabled:
            side["notice"] = "SMOTE disabled, skipped"
        elif scaled.is_balanced():
            side["notice"] = f"balanced, skipped ({' vs '.join(f'{c:,}' for c in counts)})"
        elif cfg.folds.scope != GLOBAL_SMOTE:
            side["notice"] = "deferred to training folds (train-only-smote scope)"
        else:
            cfg_s = _smote_cfg(cfg)
            balanced = smote(scaled, cfg_s)
            save_arrays(out / "balanced.npz", x=balanced.x, y=balanced.y)
            side.update(skipped=False, notice="oversampled", smote=asdict(cfg_s),
                        content_hash=balanced.content_hash())
            counts = balanced.class_counts().tolist()
        side["counts_after"] = counts
        side["rows"] = int(sum(counts))
        logger.info("balance: %s", side["notice"])
        dump_json(side, out / "balanced.json")
    return side


def stage_rank(cfg: PipelineConfig, out: Path) -> FeatureRanking:
    with _stage("rank", out):
        data = _ranking_data(cfg, out)
        gb = cfg.boost_config(data.n_classes)
        forest = train_boosted(data, gb)
        ranking = feature_importance(forest, data.feature_names)
        ups = ["prepared.json", "balanced.json"] if cfg.folds.scope == GLOBAL_SMOTE else ["prepared.json"]
        dump_json({
            "boost": asdict(gb),
            "rows": data.n_rows,
            "forest": forest.fingerprint(),
            "train_loss": list(forest.train_loss),
            "ranking": ranking.to_dict(),
            "upstream": _upstream(out, *ups),
        }, out / "ranking.json")
        logger.info("rank: top features %s", [data.feature_names[j] for j in ranking.top(5)])
    return ranking


def stage_select(cfg: PipelineConfig, out: Path) -> SelectionResult:
    with _stage("select", out):
        ranking = load_ranking(out)
        sel = cfg.selection
        if sel.fixed_k:
            if sel.fixed_k > len(ranking):
                raise StageError("select", f"fixed_k={sel.fixed_k} exceeds {len(ranking)} features")
            result = SelectionResult((), tuple(ranking.top(sel.fixed_k)), sel.threshold, sel.step, False)
        else:
            if cfg.folds.scope == GLOBAL_SMOTE:
                data, smote_cfg = load_balanced(out)[0], None
            else:
                data, smote_cfg = load_prepared(out)[1], _smote_cfg(cfg)
            specs = [cfg.learner(n) for n in sel.learners]
            result = search_subsets(data, ranking, specs, sel.threshold, sel.step,
                                    cfg.selection_fold_spec(), sel.early_exit, smote_cfg)
        doc = result.to_dict(ranking)
        names = ranking.feature_names
        doc.update(
            mode="fixed" if sel.fixed_k else "search",
            chosen_names=[names[j] for j in result.chosen],
            learners=list(sel.learners),
            n_folds=cfg.selection_fold_spec().n_folds,
            upstream=_upstream(out, "ranking.json"),
        )
        dump_json(doc, out / "selection.json")
        result.write_csv(out / "selection.csv")
        logger.info("select: chose %d features%s", result.chosen_k,
                    "" if result.any_passed or sel.fixed_k else " (no prefix met the threshold; keeping all)")
    return result


def stage_train(cfg: PipelineConfig, out: Path) -> dict:
    """Fit every evaluated learner on the full proposed feature set."""
    written = {}
    with _stage("train", out):
        data, features, smote_cfg = feature_set_data(cfg, out, "proposed")
        data = data.select_features(features)
        if cfg.folds.scope != GLOBAL_SMOTE:
            data = scale_dataset(data)
            if smote_cfg is not None and not data.is_balanced():
                data = smote(data, smote_cfg)
        models = out / "models"
        models.mkdir(exist_ok=True)
        for name in cfg.evaluate.learners:
            model = learners.fit(cfg.learner(name), data.x, data.y, data.n_classes, features)
            path = models / f"{name}.json"
            dump_json({
                "model": model.to_dict(),
                "feature_names": list(data.feature_names),
                "class_names": list(data.class_names),
                "stats": data.stats.to_dict() if data.stats is not None else None,
            }, path)
            written[name] = str(path)
            logger.info("train: wrote %s", path)
    return written


def _fold_key(feature_set: str, learner: str) -> str:
    return f"{feature_set}__{learner}"


def stage_evaluate(cfg: PipelineConfig, out: Path) -> dict[str, CVResult]:
    results = {}
    with _stage("evaluate", out):
        folds_dir = out / "folds"
        folds_dir.mkdir(exist_ok=True)
        spec = cfg.fold_spec()
        seconds = {}
        for fs in cfg.evaluate.feature_sets:
            data, features, smote_cfg = feature_set_data(cfg, out, fs)
            for name in cfg.evaluate.learners:
                lspec = cfg.learner(name)
                res = run_cv(data, lspec, features, spec, smote_cfg, threads=cfg.threads)
                key = _fold_key(fs, name)
                save_arrays(folds_dir / f"{key}.npz", fold=res.fold, index=res.index,
                            y_true=res.y_true, y_pred=res.y_pred, proba=res.proba)
                dump_json({
                    "feature_set": fs,
                    "learner": lspec.to_dict(),
                    "scope": spec.scope,
                    "n_folds": spec.n_folds,
                    "n_classes": res.n_classes,
                    "class_names": list(data.class_names),
                    "features": list(features) if features is not None else list(range(data.n_features)),
                }, folds_dir / f"{key}.json")
                seconds[key] = res.fold_seconds
                results[key] = res
                mean = res.mean_row()
                logger.info("evaluate: %s accuracy %.4f%%", key, mean.accuracy * 100)
        _update_timings(out, "folds", seconds)
        if cfg.scalability.enabled:
            data, features, _ = feature_set_data(cfg, out, "proposed")
            data = data.select_features(features)
            if cfg.folds.scope != GLOBAL_SMOTE:
                data = scale_dataset(data)
            lspec = cfg.learner(cfg.scalability.learner)
            if lspec.kind != "mlp":
                raise StageError("evaluate", "scalability.learner must be an MLP-kind learner")
            check = scalability_check(data, lspec.config, tuple(cfg.scalability.epochs), spec,
                                      cfg.scalability.tolerance_pp)
            check["learner"] = lspec.name
            dump_json(check, out / "scalability.json")
            logger.info("scalability: max delta %.4f pp (%s)", check["max_delta_pp"],
                        "scalable" if check["scalable"] else "NOT scalable")
    return results


# --------------------------------------------------------------------------- report


@dataclass
class EvalReport:
    mean: dict[str, MetricsRow]
    folds: dict[str, list[MetricsRow]]
    confusion: dict[str, np.ndarray]
    roc: dict[str, list[dict]]
    never_predicted: dict[str, list[str]]
    manifest: dict


def _fmt(v) -> str:
    return "" if v is None else "%.6f" % v


def _load_fold_results(out: Path) -> list[tuple[dict, CVResult]]:
    folds_dir = _require(out, "folds", "evaluate")
    items = []
    for side_path in folds_dir.glob("*.json"):
        side = load_json(side_path)
        arr = load_arrays(side_path.with_suffix(".npz"))
        res = CVResult(side["learner"]["name"], arr["fold"], arr["index"], arr["y_true"], arr["y_pred"],
                       arr["proba"], side["n_classes"])
        items.append((side, res))
    if not items:
        raise StageError("evaluate", f"no fold outputs in {folds_dir}; run evaluate first")
    items.sort(key=lambda it: (FEATURE_SETS.index(it[0]["feature_set"]), it[0]["learner"]["name"]))
    return items


def _roc_rows(res: CVResult, class_names: list[str]) -> list[dict]:
    classes = [1] if res.n_classes == 2 else range(res.n_classes)
    rows = []
    for c in classes:
        hit = res.y_true == c
        if not hit.any() or hit.all():
            continue
        curve = roc_points(res.proba[:, c], hit)
        for f, t, thr in zip(curve.fpr, curve.tpr, curve.thresholds):
            rows.append({"class": class_names[c], "fpr": float(f), "tpr": float(t), "threshold": float(thr)})
    return rows


def stage_report(cfg: PipelineConfig, out: Path) -> EvalReport:
    """Merge saved fold outputs into CSV tables and the run manifest."""
    with _stage("report", out):
        items = _load_fold_results(out)
        mean, per_fold, cms, rocs, never = {}, {}, {}, {}, {}
        metric_rows = []
        by_learner: dict[str, list[tuple[dict, CVResult]]] = {}
        for side, res in items:
            key = _fold_key(side["feature_set"], res.learner)
            rows = res.fold_rows()
            per_fold[key] = rows
            mean[key] = MetricsRow.mean(rows)
            cm = res.confusion()
            cms[key] = cm.counts
            flagged = classification_metrics(cm)["never_predicted"]
            if flagged:
                never[key] = [side["class_names"][c] for c in flagged]
            for label, row in [*((str(k), r) for k, r in enumerate(rows)), ("mean", mean[key])]:
                pct = row.as_percent()
                metric_rows.append([side["feature_set"], res.learner, side["scope"], label,
                                    *(_fmt(pct[f]) for f in METRIC_FIELDS)])
            by_learner.setdefault(res.learner, []).append((side, res))

        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature_set", "learner", "scope", "fold", *METRIC_FIELDS])
            w.writerows(metric_rows)

        for learner, group in by_learner.items():
            with open(out / f"confusion_{learner}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["feature_set", "actual", "predicted", "count", "percent"])
                for side, res in group:
                    cm = confusion(res.y_true, res.y_pred, res.n_classes)
                    pct = to_percent(cm)
                    names = side["class_names"]
                    for a in range(res.n_classes):
                        for p in range(res.n_classes):
                            w.writerow([side["feature_set"], names[a], names[p], int(cm.counts[a, p]),
                                        "%.6f" % pct[a, p]])
            with open(out / f"roc_{learner}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["feature_set", "class", "fpr", "tpr", "threshold"])
                for side, res in group:
                    pts = _roc_rows(res, side["class_names"])
                    rocs[_fold_key(side["feature_set"], learner)] = pts
                    for p in pts:
                        w.writerow([side["feature_set"], p["class"], repr(p["fpr"]), repr(p["tpr"]),
                                    repr(p["threshold"])])

        manifest = build_manifest(cfg, out, never)
        dump_json(manifest, out / MANIFEST)
    return EvalReport(mean, per_fold, cms, rocs, never, manifest)


def _read_optional(out: Path, name: str) -> dict | None:
    path = out / name
    return load_json(path) if path.exists() else None


def build_manifest(cfg: PipelineConfig, out: Path, never_predicted: dict | None = None) -> dict:
    """Everything needed to reproduce the run; ``volatile`` is excluded from ``digest``."""
    prepared = _read_optional(out, "prepared.json") or {}
    balanced = _read_optional(out, "balanced.json") or {}
    selection = _read_optional(out, "selection.json") or {}
    files = {}
    for path in sorted(p for p in out.rglob("*") if p.is_file()):
        rel = path.relative_to(out).as_posix()
        if rel not in _UNHASHED:
            files[rel] = sha256_file(path)
    manifest = {
        "tool": "hybrid-nids",
        "version": __version__,
        "config": cfg.snapshot(),
        "inputs": {"dataset": {"kind": cfg.dataset.kind, "sha256": prepared.get("input_sha256")}},
        "row_counts": {
            **prepared.get("rows", {}),
            "balanced": balanced.get("rows"),
        },
        "balance": {"notice": balanced.get("notice"), "counts_before": balanced.get("counts_before"),
                    "counts_after": balanced.get("counts_after")},
        "selection": {
            "chosen_k": selection.get("chosen_k"),
            "chosen": selection.get("chosen_names"),
            "any_passed": selection.get("any_passed"),
            "mode": selection.get("mode"),
        },
        "seeds": {
            "global": cfg.seed,
            "smote": cfg.seed,
            "folds": cfg.seed,
            "learners": {n: getattr(cfg.learner(n).config, "seed", None) for n in cfg.evaluate.learners},
        },
        "levers": {
            "sample_rows": cfg.dataset.sample_rows,
            "stratified_sample": cfg.dataset.stratified,
            "boost_max_bins": cfg.boost.max_bins,
            "knn_sample": cfg.evaluate.knn_sample,
            "scope": cfg.folds.scope,
            "fast_selection": cfg.selection.fast,
            "early_exit": cfg.selection.early_exit,
            "fixed_k": cfg.selection.fixed_k,
        },
        "never_predicted": never_predicted or {},
        "files": files,
    }
    manifest["digest"] = _digest(manifest)
    manifest["volatile"] = {
        "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "output_dir": str(out.resolve()),
        "timings": _read_optional(out, TIMINGS) or {},
    }
    return manifest


def manifest_digest(manifest: dict) -> str:
    """Recompute the digest of a manifest, ignoring its volatile block."""
    body = {k: v for k, v in manifest.items() if k not in ("digest", "volatile")}
    return _digest(body)


# --------------------------------------------------------------------------- whole run


STAGE_FUNCS = {
    "ingest": stage_ingest, "balance": stage_balance, "rank": stage_rank, "select": stage_select,
    "train": stage_train, "evaluate": stage_evaluate, "report": stage_report,
}


def run_pipeline(cfg: PipelineConfig, out: str | Path | None = None) -> EvalReport:
    """Run every stage in order; the result equals running them one by one."""
    out = Path(out or cfg.output_dir)
    with output_lock(out):
        stage_ingest(cfg, out)
        stage_balance(cfg, out)
        stage_rank(cfg, out)
        stage_select(cfg, out)
        if cfg.evaluate.save_models:
            stage_train(cfg, out)
        stage_evaluate(cfg, out)
        return stage_report(cfg, out)
