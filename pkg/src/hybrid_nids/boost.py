"""Second-order gradient-boosted regression trees.

Each round fits a tree to the first and second derivatives of the log-loss
at the current margins. Leaf weights are the closed-form minimizers
``-G / (H + lambda)`` and splits are chosen by the regularized gain; the
per-feature sum of realized gains is the importance score used for ranking.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateLeafError, ShapeError
from .ingest import Dataset
from .tree import FlatTree, TreeBuffer, candidate_positions, midpoint

logger = logging.getLogger(__name__)

LOGISTIC = "binary-logistic"
SOFTMAX = "softmax"
FOREST_VERSION = "boosted-forest/1"

# cap on (rows x features) cells materialized at once during exact split search
_CELL_BUDGET = 4_000_000


@dataclass(frozen=True)
class GBConfig:
    n_rounds: int = 50
    max_depth: int = 6
    eta: float = 0.3
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    objective: str = LOGISTIC
    n_classes: int = 2
    max_bins: int | None = None  # quantile-split mode when set

    def __post_init__(self):
        if self.n_rounds < 0:
            raise ConfigError("must be >= 0", path="boost.n_rounds")
        if self.max_depth < 1:
            raise ConfigError("must be >= 1", path="boost.max_depth")
        if not 0 < self.eta <= 1:
            raise ConfigError("must be in (0, 1]", path="boost.eta")
        for name in ("reg_lambda", "gamma", "min_child_weight"):
            if getattr(self, name) < 0:
                raise ConfigError("must be >= 0", path=f"boost.{name}")
        if self.objective not in (LOGISTIC, SOFTMAX):
            raise ConfigError(f"unknown objective {self.objective!r}", path="boost.objective")
        if self.objective == SOFTMAX and self.n_classes < 2:
            raise ConfigError("softmax needs n_classes >= 2", path="boost.n_classes")
        if self.max_bins is not None and self.max_bins < 2:
            raise ConfigError("must be >= 2", path="boost.max_bins")

    @property
    def n_outputs(self) -> int:
        return self.n_classes if self.objective == SOFTMAX else 1


# --------------------------------------------------------------------------- objective


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_loss(margin: np.ndarray, y: np.ndarray, objective: str = LOGISTIC) -> float:
    """Mean negative log-likelihood at the given margins."""
    margin = np.asarray(margin, dtype=np.float64)
    y = np.asarray(y)
    if objective == LOGISTIC:
        return float(np.mean(np.logaddexp(0.0, margin) - y * margin))
    zmax = margin.max(axis=1, keepdims=True)
    lse = (zmax + np.log(np.exp(margin - zmax).sum(axis=1, keepdims=True)))[:, 0]
    return float(np.mean(lse - margin[np.arange(len(y)), y]))


def grad_hess(margin: np.ndarray, y: np.ndarray, objective: str = LOGISTIC) -> tuple[np.ndarray, np.ndarray]:
    """Per-row first and second derivatives of the log-loss w.r.t. the margin.

    Softmax returns ``(n, K)`` arrays holding the diagonal of the Hessian.
    """
    margin = np.asarray(margin, dtype=np.float64)
    y = np.asarray(y)
    if objective == LOGISTIC:
        p = sigmoid(margin)
        return p - y, p * (1.0 - p)
    p = softmax(margin)
    onehot = np.zeros_like(p)
    onehot[np.arange(len(y)), y] = 1.0
    return p - onehot, p * (1.0 - p)


def leaf_weight(G: float, H: float, reg_lambda: float) -> float:
    denom = H + reg_lambda
    if denom <= 0:
        raise DegenerateLeafError(f"hessian sum + lambda = {denom} is not positive")
    return -G / denom


def split_gain(GL, HL, GR, HR, reg_lambda: float, gamma: float):
    """Loss reduction of a split (vectorizes over array inputs)."""
    return 0.5 * (GL * GL / (HL + reg_lambda) + GR * GR / (HR + reg_lambda)
                  - (GL + GR) ** 2 / (HL + HR + reg_lambda)) - gamma


# --------------------------------------------------------------------------- tree growth


@dataclass
class _Split:
    gain: float = 0.0
    feature: int = -1
    threshold: float = 0.0
    left: np.ndarray | None = None  # boolean mask over node rows


def _best_split_exact(x: np.ndarray, g: np.ndarray, h: np.ndarray, cfg: GBConfig) -> _Split:
    n, d = x.shape
    best = _Split()
    if n < 2:
        return best
    G, H = g.sum(), h.sum()
    lam, mcw = cfg.reg_lambda, cfg.min_child_weight
    step = max(1, _CELL_BUDGET // n)
    for f0 in range(0, d, step):
        block = x[:, f0:f0 + step]
        order = np.argsort(block, axis=0, kind="stable")
        v = np.take_along_axis(block, order, axis=0)
        cg = np.cumsum(g[order], axis=0)[:-1]
        ch = np.cumsum(h[order], axis=0)[:-1]
        ok = (v[:-1] < v[1:]) & (ch >= mcw) & (H - ch >= mcw)
        if not ok.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            gains = split_gain(cg, ch, G - cg, H - ch, lam, cfg.gamma)
        gains = np.where(ok, gains, -np.inf)
        # feature-major flattening: argmax ties go to the lowest feature, then lowest threshold
        flat = int(np.argmax(gains.T))
        fj, pos = divmod(flat, n - 1)
        if gains[pos, fj] > best.gain:
            f = f0 + fj
            lo, hi = v[pos, fj], v[pos + 1, fj]
            thr = midpoint(lo, hi)
            best = _Split(float(gains[pos, fj]), f, thr, x[:, f] < thr)
    return best


class _Binner:
    """Per-feature quantile bin edges for the histogram split mode."""

    def __init__(self, x: np.ndarray, max_bins: int):
        qs = np.linspace(0.0, 1.0, max_bins + 1)[1:-1]
        self.edges = []
        for j in range(x.shape[1]):
            col = x[:, j]
            distinct = np.unique(col)
            if len(distinct) <= max_bins:
                edges = (distinct[:-1] + distinct[1:]) / 2.0
            else:
                edges = np.unique(np.quantile(col, qs))
            self.edges.append(edges)
        self.n_bins = max(len(e) for e in self.edges) + 1
        self.codes = np.column_stack(
            [np.searchsorted(e, x[:, j], side="right") for j, e in enumerate(self.edges)]
        ).astype(np.int64)


def _best_split_binned(rows: np.ndarray, binner: _Binner, g: np.ndarray, h: np.ndarray, cfg: GBConfig) -> _Split:
    best = _Split()
    if len(rows) < 2:
        return best
    codes = binner.codes[rows]
    d = codes.shape[1]
    nb = binner.n_bins
    flat = (codes + np.arange(d) * nb).ravel()
    hist_g = np.bincount(flat, weights=np.repeat(g, d), minlength=d * nb).reshape(d, nb)
    hist_h = np.bincount(flat, weights=np.repeat(h, d), minlength=d * nb).reshape(d, nb)
    hist_n = np.bincount(flat, minlength=d * nb).reshape(d, nb)
    G, H = g.sum(), h.sum()
    cg = np.cumsum(hist_g, axis=1)[:, :-1]
    ch = np.cumsum(hist_h, axis=1)[:, :-1]
    cn = np.cumsum(hist_n, axis=1)[:, :-1]
    mcw = cfg.min_child_weight
    ok = (hist_n[:, :-1] > 0) & (cn > 0) & (cn < len(rows)) & (ch >= mcw) & (H - ch >= mcw)
    for j, e in enumerate(binner.edges):
        ok[j, len(e):] = False
    if not ok.any():
        return best
    with np.errstate(divide="ignore", invalid="ignore"):
        gains = split_gain(cg, ch, G - cg, H - ch, cfg.reg_lambda, cfg.gamma)
    gains = np.where(ok, gains, -np.inf)
    f, b = divmod(int(np.argmax(gains)), nb - 1)
    if gains[f, b] > 0:
        best = _Split(float(gains[f, b]), f, float(binner.edges[f][b]), codes[:, f] <= b)
    return best


def build_tree(
    x: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    config: GBConfig,
    cum_gain: np.ndarray | None = None,
    binner: _Binner | None = None,
) -> FlatTree:
    """Grow one regression tree on gradient statistics (unscaled leaf weights).

    Realized split gains are added into ``cum_gain`` when it is given.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if not (len(g) == len(h) == len(x)):
        raise ShapeError("x, g and h must have the same number of rows")
    buf = TreeBuffer(1)
    stack = [(np.arange(len(x)), 0, buf.add_leaf(0.0))]
    while stack:
        rows, depth, node = stack.pop()
        if len(rows) == 0:
            raise RuntimeError("empty node reached during tree growth")
        gn, hn = g[rows], h[rows]
        buf.value[node][0] = leaf_weight(gn.sum(), hn.sum(), config.reg_lambda)
        if depth >= config.max_depth:
            continue
        if binner is None:
            split = _best_split_exact(x[rows], gn, hn, config)
        else:
            split = _best_split_binned(rows, binner, gn, hn, config)
        if split.feature < 0 or split.gain <= 0:
            continue
        if cum_gain is not None:
            cum_gain[split.feature] += split.gain
        left, right = buf.add_leaf(0.0), buf.add_leaf(0.0)
        buf.make_split(node, split.feature, split.threshold, left, right)
        # right pushed first so the left subtree is numbered depth-first
        stack.append((rows[~split.left], depth + 1, right))
        stack.append((rows[split.left], depth + 1, left))
    return buf.freeze(x.shape[1])


# --------------------------------------------------------------------------- forest


@dataclass(frozen=True)
class BoostedForest:
    rounds: tuple[tuple[FlatTree, ...], ...]  # one tree per output per round
    base_score: float
    config: GBConfig
    cum_gain: np.ndarray
    n_features: int
    train_loss: tuple[float, ...] = field(default=(), compare=False)

    @property
    def trees(self) -> list[FlatTree]:
        return [t for r in self.rounds for t in r]

    def to_dict(self) -> dict:
        return {
            "version": FOREST_VERSION,
            "config": asdict(self.config),
            "base_score": self.base_score,
            "n_features": self.n_features,
            "cum_gain": self.cum_gain.tolist(),
            "train_loss": list(self.train_loss),
            "rounds": [[t.to_dict() for t in r] for r in self.rounds],
        }

    @classmethod
    def from_dict(cls, d: dict) -> BoostedForest:
        if d.get("version") != FOREST_VERSION:
            raise ConfigError(f"unsupported forest version {d.get('version')!r}")
        return cls(
            tuple(tuple(FlatTree.from_dict(t) for t in r) for r in d["rounds"]),
            float(d["base_score"]),
            GBConfig(**d["config"]),
            np.asarray(d["cum_gain"], dtype=np.float64),
            int(d["n_features"]),
            tuple(d.get("train_loss", ())),
        )

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _check_labels(data: Dataset, config: GBConfig) -> None:
    if config.objective == LOGISTIC and data.n_classes != 2:
        raise ConfigError(f"binary-logistic needs 2 classes, data has {data.n_classes}", path="boost.objective")
    if config.objective == SOFTMAX and data.n_classes > config.n_classes:
        raise ConfigError(
            f"softmax configured for {config.n_classes} classes, data has {data.n_classes}",
            path="boost.n_classes",
        )


def train_boosted(data: Dataset, config: GBConfig = GBConfig()) -> BoostedForest:
    _check_labels(data, config)
    x, y = data.x, data.y
    n, d = x.shape
    if config.objective == LOGISTIC:
        rate = np.clip(y.mean(), 1e-6, 1 - 1e-6)
        base = float(np.log(rate / (1 - rate)))
        margin = np.full(n, base)
    else:
        base = 0.0
        margin = np.zeros((n, config.n_classes))
    binner = _Binner(x, config.max_bins) if config.max_bins else None
    cum_gain = np.zeros(d)
    rounds = []
    losses = [log_loss(margin, y, config.objective)]
    for r in range(config.n_rounds):
        g, h = grad_hess(margin, y, config.objective)
        if config.objective == LOGISTIC:
            tree = build_tree(x, g, h, config, cum_gain, binner)
            margin = margin + config.eta * tree.predict_value(x)[:, 0]
            rounds.append((tree,))
        else:
            trees = []
            step = np.empty_like(margin)
            for k in range(config.n_classes):
                tree = build_tree(x, g[:, k], h[:, k], config, cum_gain, binner)
                step[:, k] = tree.predict_value(x)[:, 0]
                trees.append(tree)
            margin = margin + config.eta * step
            rounds.append(tuple(trees))
        losses.append(log_loss(margin, y, config.objective))
        logger.debug("boost round %d: train loss %.6f", r, losses[-1])
    return BoostedForest(tuple(rounds), base, config, cum_gain, d, tuple(losses))


def predict_margin(forest: BoostedForest, x: np.ndarray) -> np.ndarray:
    """``base_score + eta * sum(tree outputs)``; one row in, one margin (vector) out."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.shape[1] != forest.n_features:
        raise ShapeError(f"expected {forest.n_features} features, got {x2.shape[1]}")
    k = forest.config.n_outputs
    total = np.zeros((len(x2), k))
    for trees in forest.rounds:
        for j, tree in enumerate(trees):
            total[:, j] += tree.predict_value(x2)[:, 0]
    margin = forest.base_score + forest.config.eta * total
    if k == 1:
        margin = margin[:, 0]
    return margin[0] if single else margin


def predict_proba(forest: BoostedForest, x: np.ndarray) -> np.ndarray:
    margin = predict_margin(forest, np.atleast_2d(x))
    if forest.config.objective == LOGISTIC:
        p = sigmoid(margin)
        return np.column_stack([1.0 - p, p])
    return softmax(margin)


def predict_class(forest: BoostedForest, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    margin = predict_margin(forest, np.atleast_2d(x))
    if forest.config.objective == LOGISTIC:
        out = (margin >= 0.0).astype(np.int64)  # sigmoid(m) >= 0.5
    else:
        out = np.argmax(margin, axis=1)  # first maximum = lowest class id
    return out[0] if x.ndim == 1 else out


# --------------------------------------------------------------------------- importance


@dataclass(frozen=True)
class FeatureRanking:
    """Features by descending accumulated gain (ties to the lower index)."""

    order: tuple[int, ...]
    gains: tuple[float, ...]
    source: str = ""
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        if sorted(self.order) != list(range(len(self.order))):
            raise ShapeError("ranking order must be a permutation of 0..d-1")
        if any(a < b for a, b in zip(self.gains, self.gains[1:])):
            raise ShapeError("ranking gains must be non-increasing")

    def __len__(self) -> int:
        return len(self.order)

    def top(self, k: int) -> list[int]:
        return list(self.order[:k])

    def to_dict(self) -> dict:
        names = self.feature_names or tuple(str(i) for i in range(len(self.order)))
        return {
            "source": self.source,
            "entries": [
                {"rank": r, "feature": int(f), "name": names[f], "gain": float(g)}
                for r, (f, g) in enumerate(zip(self.order, self.gains))
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> FeatureRanking:
        entries = d["entries"]
        order = tuple(int(e["feature"]) for e in entries)
        names = [""] * len(entries)
        for e in entries:
            names[int(e["feature"])] = e["name"]
        return cls(order, tuple(float(e["gain"]) for e in entries), d.get("source", ""), tuple(names))


def feature_importance(forest: BoostedForest, feature_names: tuple[str, ...] = ()) -> FeatureRanking:
    gains = forest.cum_gain
    order = sorted(range(len(gains)), key=lambda j: (-gains[j], j))
    return FeatureRanking(
        tuple(order), tuple(float(gains[j]) for j in order), forest.fingerprint(), tuple(feature_names)
    )
