"""Feedforward ReLU network with softmax output, trained by mini-batch SGD
with momentum on the cross-entropy loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigError, DivergenceError
from ..storage import decode_array, encode_array

logger = logging.getLogger(__name__)

Params = list[tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class MLPConfig:
    hidden_layers: tuple[int, ...] = (128, 64)
    activation: str = "relu"
    epochs: int = 125
    batch_size: int = 256
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(w) for w in self.hidden_layers))
        if any(w < 1 for w in self.hidden_layers):
            raise ConfigError("every width must be >= 1", path="mlp.hidden_layers")
        if self.epochs < 1:
            raise ConfigError("must be >= 1", path="mlp.epochs")
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", path="mlp.batch_size")
        if self.learning_rate <= 0:
            raise ConfigError("must be > 0", path="mlp.learning_rate")
        if not 0 <= self.momentum < 1:
            raise ConfigError("must be in [0, 1)", path="mlp.momentum")
        if self.activation != "relu":
            raise ConfigError("only 'relu' is supported", path="mlp.activation")


def init_params(n_in: int, hidden: tuple[int, ...], n_out: int, rng: np.random.Generator) -> Params:
    """He-normal weights for ReLU layers, zero biases."""
    sizes = [n_in, *hidden, n_out]
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        params.append((w, np.zeros(fan_out)))
    return params


def forward(params: Params, x: np.ndarray) -> list[np.ndarray]:
    """Activations of every layer; the last entry is the softmax output."""
    acts = [x]
    for i, (w, b) in enumerate(params):
        z = acts[-1] @ w + b
        if i < len(params) - 1:
            acts.append(np.maximum(z, 0.0))
        else:
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            acts.append(e / e.sum(axis=1, keepdims=True))
    return acts


def cross_entropy(probs: np.ndarray, y: np.ndarray) -> float:
    p = probs[np.arange(len(y)), y]
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))


def loss_and_grads(params: Params, x: np.ndarray, y: np.ndarray) -> tuple[float, Params]:
    """Mean cross-entropy and its gradient w.r.t. every weight and bias."""
    acts = forward(params, x)
    n = len(y)
    loss = cross_entropy(acts[-1], y)
    delta = acts[-1].copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads: Params = []
    for i in range(len(params) - 1, -1, -1):
        w, _ = params[i]
        grads.append((acts[i].T @ delta, delta.sum(axis=0)))
        if i:
            delta = (delta @ w.T) * (acts[i] > 0)
    grads.reverse()
    return loss, grads


class MLP:
    kind = "mlp"

    def __init__(self, cfg: MLPConfig = MLPConfig()):
        self.cfg = cfg
        self.params: Params = []
        self.n_classes = 0
        self.loss_history: list[float] = []

    def fit(self, x: np.ndarray, y: np.ndarray, n_classes: int, checkpoints: tuple[int, ...] = ()) -> MLP:
        """Train for ``cfg.epochs``; ``self.snapshots`` keeps copies at ``checkpoints``."""
        cfg = self.cfg
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        rng = np.random.default_rng(cfg.seed & 0xFFFFFFFFFFFFFFFF)
        self.n_classes = n_classes
        params = init_params(x.shape[1], cfg.hidden_layers, n_classes, rng)
        velocity = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
        self.snapshots: dict[int, MLP] = {}
        self.loss_history = []
        n = len(x)
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, cfg.batch_size):
                rows = order[start:start + cfg.batch_size]
                with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
                    loss, grads = loss_and_grads(params, x[rows], y[rows])
                if not np.isfinite(loss):
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch}; try a smaller learning rate "
                        f"(currently {cfg.learning_rate})"
                    )
                total += loss * len(rows)
                for i, ((w, b), (gw, gb), (vw, vb)) in enumerate(zip(params, grads, velocity)):
                    vw *= cfg.momentum
                    vw -= cfg.learning_rate * gw
                    vb *= cfg.momentum
                    vb -= cfg.learning_rate * gb
                    params[i] = (w + vw, b + vb)
            self.loss_history.append(total / n)
            if epoch in checkpoints:
                snap = MLP(replace(cfg, epochs=epoch))
                snap.params = [(w.copy(), b.copy()) for w, b in params]
                snap.n_classes = n_classes
                snap.loss_history = list(self.loss_history)
                self.snapshots[epoch] = snap
        self.params = params
        return self

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return forward(self.params, np.atleast_2d(np.asarray(x, dtype=np.float64)))[-1]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(x), axis=1)

    def state(self) -> dict:
        return {
            "layers": [{"weight": encode_array(w), "bias": encode_array(b)} for w, b in self.params],
            "loss_history": self.loss_history,
        }

    def load_state(self, state: dict, n_classes: int) -> MLP:
        self.params = [(decode_array(l["weight"]), decode_array(l["bias"])) for l in state["layers"]]
        self.loss_history = list(state.get("loss_history", []))
        self.n_classes = n_classes
        return self
