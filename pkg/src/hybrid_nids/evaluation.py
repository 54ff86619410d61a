"""Cross-validation harness and metrics."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import learners
from .errors import ArgumentError, ConfigError, NidsError, UndefinedMetricError
from .ingest import Dataset, scale_dataset
from .sampler import SmoteConfig, smote

logger = logging.getLogger(__name__)

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

GLOBAL_SMOTE = "global-smote"
TRAIN_ONLY_SMOTE = "train-only-smote"


@dataclass(frozen=True)
class FoldSpec:
    n_folds: int = 10
    seed: int = 0
    scope: str = GLOBAL_SMOTE
    stratified: bool = True

    def __post_init__(self):
        if self.n_folds < 2:
            raise ConfigError("must be >= 2", path="folds.n_folds")
        if self.scope not in (GLOBAL_SMOTE, TRAIN_ONLY_SMOTE):
            raise ConfigError(f"unknown scope {self.scope!r}", path="folds.scope")


class FoldError(NidsError):
    def __init__(self, fold: int, learner: str, cause: Exception):
        self.fold = fold
        self.exit_code = getattr(cause, "exit_code", 4)
        super().__init__(f"{learner}, fold {fold}: {cause}")


# --------------------------------------------------------------------------- folds


def kfold_split(n: int, spec: FoldSpec = FoldSpec(), y: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded k-fold partition of ``range(n)``.

    Rows are shuffled (within each class when stratified), laid end to end
    class by class, and dealt round-robin to folds. Fold sizes then differ by
    at most one, and so do the per-class counts.
    """
    if n < spec.n_folds:
        raise ArgumentError(f"{n} rows cannot form {spec.n_folds} folds")
    rng = np.random.default_rng(spec.seed & 0xFFFFFFFFFFFFFFFF)
    if spec.stratified and y is not None:
        y = np.asarray(y)
        if len(y) != n:
            raise ArgumentError("label vector length differs from n")
        sequence = np.concatenate([rng.permutation(np.flatnonzero(y == c)) for c in np.unique(y)])
    else:
        sequence = rng.permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[sequence] = np.arange(n) % spec.n_folds
    out = []
    everything = np.arange(n)
    for k in range(spec.n_folds):
        test = everything[fold_of == k]
        train = everything[fold_of != k]
        out.append((train, test))
    return out


# --------------------------------------------------------------------------- metrics


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are actual classes, columns predicted classes."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]


def confusion(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ArgumentError("y_true and y_pred differ in length")
    if len(y_true) and (max(y_true.max(), y_pred.max()) >= n_classes or min(y_true.min(), y_pred.min()) < 0):
        raise ArgumentError(f"labels must lie in [0, {n_classes})")
    counts = np.bincount(y_true * n_classes + y_pred, minlength=n_classes * n_classes)
    return ConfusionMatrix(counts.reshape(n_classes, n_classes))


def to_percent(cm: ConfusionMatrix) -> np.ndarray:
    return cm.counts / cm.total * 100.0


def classification_metrics(cm: ConfusionMatrix, averaging: str = "macro") -> dict:
    """Accuracy plus averaged precision/recall/F1 (0/0 counts as 0)."""
    if cm.total <= 0:
        raise ArgumentError("confusion matrix is empty")
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    predicted = c.sum(axis=0)
    actual = c.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(actual > 0, tp / actual, 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    if averaging == "macro":
        weights = np.full(cm.n_classes, 1.0 / cm.n_classes)
    elif averaging == "weighted":
        weights = actual / actual.sum()
    else:
        raise ArgumentError(f"unknown averaging {averaging!r}")
    return {
        "accuracy": float(tp.sum() / cm.total),
        "precision": float(weights @ precision),
        "recall": float(weights @ recall),
        "f1": float(weights @ f1),
        "never_predicted": [int(k) for k in np.flatnonzero((predicted == 0) & (actual > 0))],
    }


def regression_errors(y_true: np.ndarray, y_pred: np.ndarray) -> tuple[float, float, float]:
    """MAE, MSE and RMSE of the integer label codes."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise ArgumentError("y_true and y_pred differ in length")
    diff = y_true - y_pred
    mse = float(np.mean(diff * diff))
    return float(np.mean(np.abs(diff))), mse, math.sqrt(mse)


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # +inf for the (0, 0) endpoint


def roc_points(scores: np.ndarray, y: np.ndarray) -> RocCurve:
    """(FPR, TPR) after admitting each distinct score, highest first."""
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y).astype(bool)
    pos, neg = int(y.sum()), int((~y).sum())
    if pos == 0 or neg == 0:
        raise UndefinedMetricError("ROC needs both classes present")
    order = np.argsort(-scores, kind="stable")
    s, t = scores[order], y[order]
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), len(s) - 1]
    tp = np.cumsum(t)[last]
    fp = (last + 1) - tp
    return RocCurve(np.r_[0.0, fp / neg], np.r_[0.0, tp / pos], np.r_[np.inf, s[last]])


def auc(points: RocCurve) -> float:
    return float(_trapezoid(points.tpr, points.fpr))


def macro_auc(proba: np.ndarray, y: np.ndarray) -> float:
    """Binary AUC on the class-1 score, else the macro one-vs-rest average."""
    proba = np.asarray(proba)
    y = np.asarray(y)
    if proba.shape[1] == 2:
        return auc(roc_points(proba[:, 1], y == 1))
    vals = []
    for k in range(proba.shape[1]):
        hit = y == k
        if hit.any() and not hit.all():
            vals.append(auc(roc_points(proba[:, k], hit)))
    if not vals:
        raise UndefinedMetricError("no class has both positive and negative rows")
    return float(np.mean(vals))


@dataclass(frozen=True)
class MetricsRow:
    accuracy: float
    precision: float
    recall: float
    f1: float
    mae: float
    mse: float
    rmse: float
    auc: float | None = None
    weighted_precision: float = 0.0
    weighted_recall: float = 0.0
    weighted_f1: float = 0.0

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_classes: int, proba: np.ndarray | None = None) -> MetricsRow:
        cm = confusion(y_true, y_pred, n_classes)
        macro = classification_metrics(cm, "macro")
        weighted = classification_metrics(cm, "weighted")
        mae, mse, rmse = regression_errors(y_true, y_pred)
        area = None
        if proba is not None:
            try:
                area = macro_auc(proba, y_true)
            except UndefinedMetricError:
                area = None
        return cls(macro["accuracy"], macro["precision"], macro["recall"], macro["f1"], mae, mse, rmse,
                   area, weighted["precision"], weighted["recall"], weighted["f1"])

    @classmethod
    def mean(cls, rows: list[MetricsRow]) -> MetricsRow:
        vals = {}
        for f in fields(cls):
            xs = [getattr(r, f.name) for r in rows]
            if f.name == "auc":
                xs = [v for v in xs if v is not None]
                vals[f.name] = float(np.mean(xs)) if xs else None
            else:
                vals[f.name] = float(np.mean(xs))
        return cls(**vals)

    def as_percent(self) -> dict:
        return {k: (None if v is None else v * 100.0) for k, v in asdict(self).items()}


# --------------------------------------------------------------------------- cross-validation


@dataclass
class CVResult:
    learner: str
    fold: np.ndarray  # fold id per out-of-fold row
    index: np.ndarray  # dataset row per out-of-fold row
    y_true: np.ndarray
    y_pred: np.ndarray
    proba: np.ndarray
    n_classes: int
    fold_seconds: list[float] = field(default_factory=list)

    @property
    def n_folds(self) -> int:
        return int(self.fold.max()) + 1

    def fold_rows(self) -> list[MetricsRow]:
        rows = []
        for k in range(self.n_folds):
            m = self.fold == k
            rows.append(MetricsRow.from_predictions(self.y_true[m], self.y_pred[m], self.n_classes, self.proba[m]))
        return rows

    def mean_row(self) -> MetricsRow:
        return MetricsRow.mean(self.fold_rows())

    def confusion(self) -> ConfusionMatrix:
        return confusion(self.y_true, self.y_pred, self.n_classes)


def _fold_data(data: Dataset, train: np.ndarray, test: np.ndarray, spec: FoldSpec, smote_cfg: SmoteConfig | None):
    tr, te = data.take(train), data.take(test)
    if spec.scope == TRAIN_ONLY_SMOTE:
        tr = scale_dataset(tr)
        te = scale_dataset(te, tr.stats)
        if smote_cfg is not None and not tr.is_balanced():
            tr = smote(tr, smote_cfg)
    return tr, te


def run_cv(
    data: Dataset,
    learner,
    features=None,
    spec: FoldSpec = FoldSpec(),
    smote_cfg: SmoteConfig | None = None,
    threads: int = 1,
) -> CVResult:
    """Out-of-fold predictions of one learner on the given feature subset.

    ``learner`` is a :class:`LearnerSpec` or any ``fit(x, y, n_classes)``
    callable returning an object with ``predict`` and ``predict_proba``. In
    ``train-only-smote`` scope, standardization stats and SMOTE come from the
    training fold alone; in ``global-smote`` scope ``data`` is used as given.
    """
    if features is not None:
        features = list(features)
        if any(not 0 <= j < data.n_features for j in features):
            raise ArgumentError("feature index outside the dataset")
        data = data.select_features(features)
    if isinstance(learner, learners.LearnerSpec):
        name = learner.name
        fit_fn = lambda x, y, k: learners.fit(learner, x, y, k)  # noqa: E731
    else:
        name = getattr(learner, "__name__", "custom")
        fit_fn = learner
    splits = kfold_split(data.n_rows, spec, data.y)

    def one(k):
        train, test = splits[k]
        t0 = time.perf_counter()
        try:
            tr, te = _fold_data(data, train, test, spec, smote_cfg)
            model = fit_fn(tr.x, tr.y, data.n_classes)
            pred = np.asarray(model.predict(te.x), dtype=np.int64)
            proba = np.asarray(model.predict_proba(te.x), dtype=np.float64)
        except NidsError as exc:
            raise FoldError(k, name, exc) from exc
        logger.info("%s fold %d/%d done", name, k + 1, spec.n_folds)
        return test, pred, proba, time.perf_counter() - t0

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            outs = list(pool.map(one, range(spec.n_folds)))
    else:
        outs = [one(k) for k in range(spec.n_folds)]
    fold = np.concatenate([np.full(len(o[0]), k) for k, o in enumerate(outs)])
    index = np.concatenate([o[0] for o in outs])
    return CVResult(
        name, fold, index, data.y[index],
        np.concatenate([o[1] for o in outs]),
        np.vstack([o[2] for o in outs]),
        data.n_classes,
        [o[3] for o in outs],
    )


# --------------------------------------------------------------------------- dependability


def scalability_check(
    data: Dataset,
    mlp_cfg: learners.MLPConfig = learners.MLPConfig(),
    epochs: tuple[int, ...] = (125, 200),
    spec: FoldSpec = FoldSpec(),
    tolerance_pp: float = 0.5,
) -> dict:
    """Hold-out accuracy of the same seeded MLP stopped at each epoch count.

    One run to ``max(epochs)`` is snapshotted at every requested count; with
    the seed fixed this equals training each count separately.
    """
    epochs = tuple(sorted(set(int(e) for e in epochs)))
    if not epochs:
        raise ArgumentError("epoch list is empty")
    train, test = kfold_split(data.n_rows, spec, data.y)[0]
    tr, te = data.take(train), data.take(test)
    model = learners.MLP(learners.MLPConfig(**{**asdict(mlp_cfg), "epochs": epochs[-1]}))
    model.fit(tr.x, tr.y, data.n_classes, checkpoints=epochs)
    acc = {e: float(np.mean(model.snapshots[e].predict(te.x) == te.y)) for e in epochs}
    delta_pp = (max(acc.values()) - min(acc.values())) * 100.0
    return {
        "epochs": list(epochs),
        "accuracy": {str(e): a for e, a in acc.items()},
        "max_delta_pp": delta_pp,
        "tolerance_pp": tolerance_pp,
        "scalable": delta_pp <= tolerance_pp,
    }
