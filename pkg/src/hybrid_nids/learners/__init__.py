"""Classifier registry: decision tree, random forest, KNN, MLP/ANN and the
boosted-tree classifier, behind one fit/predict contract."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Any, Union

import numpy as np

from .. import boost
from ..errors import ConfigError, ShapeError
from ..ingest import Dataset
from .cart import DecisionTree, DTConfig, RandomForest, RFConfig
from .knn import KNearestNeighbors, KNNConfig
from .mlp import MLP, MLPConfig

__all__ = [
    "DTConfig", "RFConfig", "KNNConfig", "MLPConfig", "LearnerSpec", "LearnerModel",
    "DEFAULT_LEARNERS", "SELECTION_LEARNERS", "fit", "learner_spec", "model_from_dict",
]

MODEL_VERSION = "learner/1"
LearnerConfig = Union[DTConfig, RFConfig, KNNConfig, MLPConfig, boost.GBConfig]

_KINDS = {"dt": (DecisionTree, DTConfig), "rf": (RandomForest, RFConfig),
          "knn": (KNearestNeighbors, KNNConfig), "mlp": (MLP, MLPConfig), "xgb": (None, boost.GBConfig)}


@dataclass(frozen=True)
class LearnerSpec:
    name: str
    kind: str
    config: Any

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "config": asdict(self.config)}


DEFAULT_LEARNERS: dict[str, LearnerSpec] = {
    "rf": LearnerSpec("rf", "rf", RFConfig()),
    "dt": LearnerSpec("dt", "dt", DTConfig()),
    "knn": LearnerSpec("knn", "knn", KNNConfig()),
    "mlp": LearnerSpec("mlp", "mlp", MLPConfig()),
    # the "ANN" row: same engine, one hidden layer of 64 units
    "ann": LearnerSpec("ann", "mlp", MLPConfig(hidden_layers=(64,))),
    "xgb": LearnerSpec("xgb", "xgb", boost.GBConfig()),
}
SELECTION_LEARNERS = ("rf", "dt", "knn", "mlp")


def learner_spec(name: str, kind: str | None = None, **overrides) -> LearnerSpec:
    """Default spec for ``name`` with config fields overridden."""
    if name in DEFAULT_LEARNERS and kind in (None, DEFAULT_LEARNERS[name].kind):
        base = DEFAULT_LEARNERS[name]
        cfg = replace(base.config, **overrides) if overrides else base.config
        return LearnerSpec(name, base.kind, cfg)
    if kind not in _KINDS:
        raise ConfigError(f"unknown learner kind {kind!r}", path=f"learners.{name}.kind")
    return LearnerSpec(name, kind, _KINDS[kind][1](**overrides))


class _Boosted:
    kind = "xgb"

    def __init__(self, cfg: boost.GBConfig):
        self.cfg = cfg
        self.forest: boost.BoostedForest | None = None

    def fit(self, x, y, n_classes):
        if n_classes == 2:
            cfg = replace(self.cfg, objective=boost.LOGISTIC, n_classes=2)
        else:
            cfg = replace(self.cfg, objective=boost.SOFTMAX, n_classes=n_classes)
        names = tuple(f"f{j}" for j in range(x.shape[1]))
        data = Dataset(x, y, names, tuple(str(c) for c in range(n_classes)))
        self.forest = boost.train_boosted(data, cfg)
        return self

    def predict(self, x):
        return boost.predict_class(self.forest, x)

    def predict_proba(self, x):
        return boost.predict_proba(self.forest, x)

    def state(self):
        return {"forest": self.forest.to_dict()}

    def load_state(self, state, n_classes):
        self.forest = boost.BoostedForest.from_dict(state["forest"])
        return self


def _engine(spec: LearnerSpec):
    if spec.kind == "xgb":
        return _Boosted(spec.config)
    cls, _ = _KINDS[spec.kind]
    return cls(spec.config)


@dataclass(frozen=True)
class LearnerModel:
    """A trained classifier plus the feature indices it was trained on."""

    name: str
    kind: str
    n_classes: int
    features: tuple[int, ...]
    engine: Any
    spec: LearnerSpec

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != len(self.features):
            raise ShapeError(f"{self.name} expects {len(self.features)} features, got {x.shape[1]}")
        return x

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.engine.predict(self._check(x)), dtype=np.int64)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.engine.predict_proba(self._check(x))

    def to_dict(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "name": self.name,
            "kind": self.kind,
            "n_classes": self.n_classes,
            "features": list(self.features),
            "spec": self.spec.to_dict(),
            "state": self.engine.state(),
        }


def fit(spec: LearnerSpec, x: np.ndarray, y: np.ndarray, n_classes: int,
        features: tuple[int, ...] | None = None, **fit_kwargs) -> LearnerModel:
    x = np.asarray(x, dtype=np.float64)
    engine = _engine(spec).fit(x, np.asarray(y, dtype=np.int64), n_classes, **fit_kwargs)
    features = tuple(range(x.shape[1])) if features is None else tuple(features)
    return LearnerModel(spec.name, spec.kind, n_classes, features, engine, spec)


def model_from_dict(d: dict) -> LearnerModel:
    if d.get("version") != MODEL_VERSION:
        raise ConfigError(f"unsupported model version {d.get('version')!r}")
    s = d["spec"]
    cfg_cls = _KINDS[s["kind"]][1]
    cfg = dict(s["config"])
    if "hidden_layers" in cfg:
        cfg["hidden_layers"] = tuple(cfg["hidden_layers"])
    spec = LearnerSpec(s["name"], s["kind"], cfg_cls(**cfg))
    engine = _engine(spec).load_state(d["state"], d["n_classes"])
    return LearnerModel(d["name"], d["kind"], d["n_classes"], tuple(d["features"]), engine, spec)
