"""Pipeline configuration: a TOML file, overridden by CLI flags, validated
into typed sections before any work starts."""

from __future__ import annotations

import copy
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import learners
from .boost import GBConfig, LOGISTIC
from .errors import ConfigError
from .evaluation import GLOBAL_SMOTE, FoldSpec
from .ingest import SCHEMAS

TASKS = ("binary", "multilabel")
FEATURE_SETS = ("all", "selected", "proposed")


@dataclass
class DatasetSection:
    kind: str = "generic"
    path: str = ""
    sample_rows: int = 0  # 0 keeps every row
    stratified: bool = True


@dataclass
class SmoteSection:
    enabled: bool = True
    k_neighbors: int = 5


@dataclass
class BoostSection:
    n_rounds: int = 50
    max_depth: int = 6
    eta: float = 0.3
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    max_bins: int = 0  # 0 selects exact greedy splits


@dataclass
class SelectionSection:
    threshold: float = 0.9995
    step: int = 2
    learners: list[str] = field(default_factory=lambda: list(learners.SELECTION_LEARNERS))
    early_exit: bool = False
    fast: bool = False  # 3-fold CV inside the sweep
    fixed_k: int = 0  # > 0 skips the sweep and takes the top fixed_k features


@dataclass
class FoldSection:
    n_folds: int = 10
    scope: str = GLOBAL_SMOTE
    stratified: bool = True


@dataclass
class EvaluateSection:
    learners: list[str] = field(default_factory=lambda: ["rf", "dt", "knn", "mlp", "ann"])
    feature_sets: list[str] = field(default_factory=lambda: ["proposed"])
    knn_sample: int = 0
    save_models: bool = True


@dataclass
class ScalabilitySection:
    enabled: bool = False
    epochs: list[int] = field(default_factory=lambda: [125, 200])
    tolerance_pp: float = 0.5
    learner: str = "mlp"


@dataclass
class PipelineConfig:
    seed: int = 0
    task: str = "binary"
    output_dir: str = "nids-out"
    threads: int = 1
    dataset: DatasetSection = field(default_factory=DatasetSection)
    smote: SmoteSection = field(default_factory=SmoteSection)
    boost: BoostSection = field(default_factory=BoostSection)
    selection: SelectionSection = field(default_factory=SelectionSection)
    folds: FoldSection = field(default_factory=FoldSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    scalability: ScalabilitySection = field(default_factory=ScalabilitySection)
    # per-learner overrides, e.g. {"rf": {"n_trees": 50}, "ann": {"kind": "mlp", ...}}
    learners: dict[str, dict[str, Any]] = field(default_factory=dict)

    # ------------------------------------------------------------------ views

    def snapshot(self) -> dict:
        """Config as plain data, excluding the output location."""
        d = asdict(self)
        d.pop("output_dir")
        return d

    def fold_spec(self, n_folds: int | None = None) -> FoldSpec:
        return FoldSpec(n_folds or self.folds.n_folds, self.seed, self.folds.scope, self.folds.stratified)

    def selection_fold_spec(self) -> FoldSpec:
        return self.fold_spec(3 if self.selection.fast else None)

    def boost_config(self, n_classes: int) -> GBConfig:
        b = self.boost
        objective = LOGISTIC if n_classes == 2 else "softmax"
        return GBConfig(b.n_rounds, b.max_depth, b.eta, b.reg_lambda, b.gamma, b.min_child_weight,
                        objective, n_classes, b.max_bins or None)

    def learner(self, name: str) -> learners.LearnerSpec:
        overrides = dict(self.learners.get(name, {}))
        kind = overrides.pop("kind", None)
        base_kind = kind or (learners.DEFAULT_LEARNERS[name].kind if name in learners.DEFAULT_LEARNERS else None)
        if base_kind is None:
            raise ConfigError(f"unknown learner {name!r}; give it a 'kind'", path=f"learners.{name}")
        if base_kind in ("rf", "mlp", "knn") and "seed" not in overrides:
            overrides["seed"] = self.seed
        if base_kind == "knn" and self.evaluate.knn_sample and "max_reference" not in overrides:
            overrides["max_reference"] = self.evaluate.knn_sample
        if base_kind == "rf" and "n_jobs" not in overrides:
            overrides["n_jobs"] = self.threads
        if "hidden_layers" in overrides:
            overrides["hidden_layers"] = tuple(overrides["hidden_layers"])
        try:
            return learners.learner_spec(name, base_kind, **overrides)
        except TypeError as exc:
            raise ConfigError(str(exc), path=f"learners.{name}") from None

    # ------------------------------------------------------------------ validation

    def validate(self) -> PipelineConfig:
        if self.task not in TASKS:
            raise ConfigError(f"must be one of {TASKS}", path="task")
        if self.threads < 1:
            raise ConfigError("must be >= 1", path="threads")
        if self.dataset.kind not in SCHEMAS:
            raise ConfigError(f"must be one of {SCHEMAS}", path="dataset.kind")
        if self.dataset.kind == "malmem" and self.task != "binary":
            raise ConfigError("CIC-MalMem-2022 is binary-only", path="task")
        if self.dataset.sample_rows < 0:
            raise ConfigError("must be >= 0", path="dataset.sample_rows")
        if self.smote.k_neighbors < 1:
            raise ConfigError("must be >= 1", path="smote.k_neighbors")
        self.boost_config(2)
        if not 0 < self.selection.threshold <= 1:
            raise ConfigError("must be in (0, 1]", path="selection.threshold")
        if self.selection.step < 1:
            raise ConfigError("must be >= 1", path="selection.step")
        if not self.selection.learners:
            raise ConfigError("needs at least one learner", path="selection.learners")
        if self.selection.fixed_k < 0:
            raise ConfigError("must be >= 0", path="selection.fixed_k")
        self.fold_spec()
        if not self.evaluate.learners:
            raise ConfigError("needs at least one learner", path="evaluate.learners")
        for fs in self.evaluate.feature_sets:
            if fs not in FEATURE_SETS:
                raise ConfigError(f"unknown feature set {fs!r}; expected {FEATURE_SETS}", path="evaluate.feature_sets")
        if self.evaluate.knn_sample < 0:
            raise ConfigError("must be >= 0", path="evaluate.knn_sample")
        if not self.scalability.epochs or any(e < 1 for e in self.scalability.epochs):
            raise ConfigError("needs positive epoch counts", path="scalability.epochs")
        for name in {*self.selection.learners, *self.evaluate.learners, *self.learners}:
            self.learner(name)
        return self


def _build(cls, data: dict, path: str):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError("unknown key", path=where)
        sub = _SECTIONS.get(key) if not path else None
        if sub is not None:
            if not isinstance(value, dict):
                raise ConfigError("expected a table", path=where)
            value = _build(sub, value, where)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc), path=path or None) from None


_SECTIONS = {
    "dataset": DatasetSection, "smote": SmoteSection, "boost": BoostSection,
    "selection": SelectionSection, "folds": FoldSection, "evaluate": EvaluateSection,
    "scalability": ScalabilitySection,
}


def _check_types(obj, path: str = "") -> None:
    """Reject values whose type differs from the field default's type."""
    for f in fields(obj):
        value = getattr(obj, f.name)
        where = f"{path}.{f.name}" if path else f.name
        if hasattr(value, "__dataclass_fields__"):
            _check_types(value, where)
            continue
        default = f.default_factory() if f.default is MISSING else f.default
        expected = type(default)
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            continue
        if not isinstance(value, expected) or (expected is not bool and isinstance(value, bool)):
            raise ConfigError(f"expected {expected.__name__}, got {type(value).__name__}", path=where)
        if expected is list:
            item_type = type(default[0]) if default else None
            if item_type is not None and not all(isinstance(v, item_type) and not isinstance(v, bool) for v in value):
                raise ConfigError(f"expected a list of {item_type.__name__}", path=where)


def config_from_dict(data: dict) -> PipelineConfig:
    cfg = _build(PipelineConfig, copy.deepcopy(data), "")
    _check_types(cfg)
    return cfg.validate()


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Read a TOML file (optional) and apply dotted-key overrides."""
    data: dict = {}
    if path is not None:
        try:
            data = tomllib.loads(Path(path).read_text())
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}", path=str(path)) from None
    for dotted, value in (overrides or {}).items():
        node = data
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return config_from_dict(data)
