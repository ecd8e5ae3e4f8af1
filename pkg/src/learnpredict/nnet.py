"""Dense layers, softmax cross-entropy, Adam and gradient checking in numpy.

Matrices are plain float64 ndarrays; a bias is a ``(1, out_dim)`` row.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

PROB_FLOOR = 1e-12
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class InitSpec:
    stddev: float = 0.1
    truncation: float = 2.0  # in units of stddev
    seed: int = 0

    def __post_init__(self):
        if self.stddev <= 0:
            raise ValueError("stddev must be positive")
        if self.truncation < 1e-3:
            raise ValueError("truncation below 1e-3 stddev would not terminate")


def init_truncated_normal(shape, spec: InitSpec = InitSpec(), rng: np.random.Generator | None = None) -> np.ndarray:
    """Zero-mean normal samples, redrawing any beyond ``truncation`` stddevs."""
    if any(int(s) <= 0 for s in np.atleast_1d(shape)):
        raise ValueError(f"non-positive shape {shape}")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    bound = spec.truncation * spec.stddev
    out = rng.normal(0.0, spec.stddev, size=shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.normal(0.0, spec.stddev, size=int(bad.sum()))
        bad = np.abs(out) > bound
    return out


@dataclass
class DenseLayer:
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float).reshape(1, -1)
        if self.W.ndim != 2 or self.W.shape[1] != self.b.shape[1]:
            raise ValueError(f"inconsistent layer shapes W{self.W.shape} b{self.b.shape}")

    @classmethod
    def init(cls, in_dim: int, out_dim: int, spec: InitSpec = InitSpec(), rng=None) -> "DenseLayer":
        return cls(init_truncated_normal((in_dim, out_dim), spec, rng), np.zeros((1, out_dim)))

    @property
    def in_dim(self) -> int:
        return self.W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W.shape[1]


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise ValueError(f"input shape {x.shape} incompatible with layer in_dim {layer.in_dim}")
    return x @ layer.W + layer.b


def dense_backward(layer: DenseLayer, x: np.ndarray, dout: np.ndarray):
    """Gradients (dW, db, dx) of a dense layer given upstream ``dout``."""
    return x.T @ dout, dout.sum(axis=0, keepdims=True), dout @ layer.W.T


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z, dtype=float))
    shifted = np.exp(z - z.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def one_hot(labels, n_classes: int = 2) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def sample_weights(labels, class_weights=None) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    if class_weights is None:
        return np.ones(labels.size)
    return np.asarray(class_weights, dtype=float)[labels]


def inverse_frequency_weights(labels, n_classes: int = 2) -> np.ndarray:
    """Class weights n / (k * count_c); classes absent from ``labels`` get weight 1."""
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=n_classes).astype(float)
    weights = np.ones(n_classes)
    present = counts > 0
    weights[present] = counts.sum() / (n_classes * counts[present])
    return weights


def cross_entropy(probs: np.ndarray, labels, class_weights=None, reduction: str = "sum") -> float:
    """Weighted negative log-likelihood of the true class.

    ``labels`` may be integer classes or a one-hot matrix. ``reduction`` is
    ``"sum"`` (over the batch) or ``"mean"``.
    """
    probs = np.atleast_2d(probs)
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if labels.shape != probs.shape:
            raise ValueError(f"shape mismatch: probs {probs.shape}, labels {labels.shape}")
        labels = labels.argmax(axis=1)
    if labels.shape[0] != probs.shape[0]:
        raise ValueError(f"shape mismatch: {probs.shape[0]} rows vs {labels.shape[0]} labels")
    p_true = probs[np.arange(labels.size), labels.astype(int)]
    losses = -sample_weights(labels, class_weights) * np.log(np.maximum(p_true, PROB_FLOOR))
    if reduction == "sum":
        return float(losses.sum())
    if reduction == "mean":
        return float(losses.mean())
    raise ValueError(f"unknown reduction {reduction!r}")


def softmax_ce_backward(probs: np.ndarray, labels, weights: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """d(loss)/d(logits) for softmax followed by weighted cross-entropy."""
    return (probs - one_hot(labels, probs.shape[1])) * (weights * scale)[:, None]


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def dropout_mask(shape, rate: float, rng: np.random.Generator | None = None, training: bool = True) -> np.ndarray:
    """Inverted-dropout mask: kept units scaled by 1/(1-rate); all ones at inference."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return np.ones(shape)
    if rng is None:
        rng = np.random.default_rng()
    return (rng.random(shape) >= rate) / (1.0 - rate)


# ---------------------------------------------------------------------------
# Gradient checking


def gradient_check(network, x: np.ndarray, labels, h: float = 1e-5, class_weights=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``network`` must expose ``params`` (name -> array) and
    ``loss_and_grads(x, labels, weights)``. Parameters are perturbed in
    place and restored afterwards.
    """
    weights = sample_weights(labels, class_weights)
    _, analytic = network.loss_and_grads(x, labels, weights)
    worst = 0.0
    for name, p in network.params.items():
        a = analytic[name]
        flat = p.reshape(-1)
        grad = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up, _ = network.loss_and_grads(x, labels, weights)
            flat[i] = orig - h
            down, _ = network.loss_and_grads(x, labels, weights)
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            err = abs(grad[i] - numeric) / max(abs(grad[i]), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Snapshots


def params_to_json(params: Mapping[str, np.ndarray]) -> dict:
    return {
        name: {"shape": list(arr.shape), "values": [float(v) for v in arr.reshape(-1)]}
        for name, arr in params.items()
    }


def params_from_json(obj: Mapping) -> dict[str, np.ndarray]:
    return {
        name: np.array(entry["values"], dtype=float).reshape(entry["shape"])
        for name, entry in obj.items()
    }


def save_snapshot(params: Mapping[str, np.ndarray], path: str | Path, **header) -> None:
    doc = {"format_version": SNAPSHOT_VERSION, **header, "params": params_to_json(params)}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_snapshot(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {doc.get('format_version')}")
    params = params_from_json(doc.pop("params"))
    return doc, params
