"""Baseline, similarity-gated and learned-gate classifiers with a common training loop.

* ``BNN`` -- softmax regression on the full behavioral feature vector.
* ``ESN`` -- keeps only features of segments whose text is similar enough to
  the summed quiz text, then one ReLU hidden layer.
* ``TBN`` -- a shared linear gate on (segment vector * quiz-sum vector) decides,
  per segment, whether its features reach the hidden layer. The gate is a
  sigmoid while training and a hard 0/1 step at inference.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

from . import nnet
from .errors import TrainingError, ValidationError
from .metrics import accuracy, auc_roc
from .nnet import InitSpec, relu, sigmoid, softmax, softmax_ce_backward
from .textpipe import CourseText, cosine_similarity

log = logging.getLogger(__name__)

MODEL_KINDS = ("bnn", "esn", "tbn")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.005
    batch_size: int = 50
    epochs: int = 2000
    hidden_dim: int = 8
    seed: int | tuple = 0
    dropout_rate: float | None = None  # None: 0.2 for TBN, 0 otherwise
    class_weights: str | tuple | None = None  # None, "balanced" or explicit (w_fail, w_pass)
    early_stop_patience: int | None = None
    init_stddev: float = 0.1
    esn_threshold: float | None = None  # None: median segment similarity
    epoch_mode: str = "batch"  # "batch": one mini-batch per epoch; "pass": a full sweep

    def __post_init__(self):
        for name in ("lr", "batch_size", "epochs", "hidden_dim", "init_stddev"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.dropout_rate is not None and not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.early_stop_patience is not None and self.early_stop_patience <= 0:
            raise ValueError("early_stop_patience must be positive")
        if self.epoch_mode not in ("batch", "pass"):
            raise ValueError(f"epoch_mode must be 'batch' or 'pass', got {self.epoch_mode!r}")


class Network:
    """Common parameter handling; subclasses implement ``_forward``/``_backward``."""

    kind = ""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.trained = False

    def forward(self, x: np.ndarray, training: bool = False, rng=None) -> np.ndarray:
        """Class probabilities, shape (n, 2); column 1 is pass."""
        probs, _ = self._forward(np.asarray(x, dtype=float), training, rng)
        return probs

    def loss_and_grads(self, x, labels, weights=None, training: bool = False, rng=None):
        """Weighted mean cross-entropy over the batch and its parameter gradients."""
        x = np.asarray(x, dtype=float)
        labels = np.asarray(labels, dtype=int)
        weights = np.ones(labels.size) if weights is None else np.asarray(weights, dtype=float)
        probs, cache = self._forward(x, training, rng)
        n = labels.size
        p_true = np.maximum(probs[np.arange(n), labels], nnet.PROB_FLOOR)
        loss = float(np.sum(-weights * np.log(p_true)) / n)
        dlogits = softmax_ce_backward(probs, labels, weights, 1.0 / n)
        return loss, self._backward(cache, dlogits)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[:, 1]

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    # serialization
    def header(self) -> dict:
        return {"architecture": self.kind}

    def save(self, path: str | Path) -> None:
        nnet.save_snapshot(self.params, path, **self.header())


class BNN(Network):
    kind = "bnn"

    def __init__(self, in_dim: int, init: InitSpec = InitSpec(), rng=None, zero: bool = False):
        super().__init__()
        W = np.zeros((in_dim, 2)) if zero else nnet.init_truncated_normal((in_dim, 2), init, rng)
        self.params = {"W": W, "b": np.zeros((1, 2))}

    def _forward(self, x, training, rng):
        if x.ndim != 2 or x.shape[1] != self.params["W"].shape[0]:
            raise ValueError(f"expected {self.params['W'].shape[0]} features, got shape {x.shape}")
        logits = x @ self.params["W"] + self.params["b"]
        return softmax(logits), x

    def _backward(self, x, dlogits):
        return {"W": x.T @ dlogits, "b": dlogits.sum(axis=0, keepdims=True)}


class _HiddenNet(Network):
    """Input transform -> dense + ReLU (+ dropout) -> dense -> softmax."""

    dropout_rate = 0.0

    def _init_layers(self, in_dim: int, hidden: int, init: InitSpec, rng, zero: bool):
        def draw(shape):
            return np.zeros(shape) if zero else nnet.init_truncated_normal(shape, init, rng)

        self.params.update(
            W1=draw((in_dim, hidden)),
            b1=np.zeros((1, hidden)),
            W2=draw((hidden, 2)),
            b2=np.zeros((1, 2)),
        )

    def _hidden_forward(self, xin, training, rng):
        p = self.params
        pre = xin @ p["W1"] + p["b1"]
        mask = nnet.dropout_mask(pre.shape, self.dropout_rate, rng, training) if training else None
        h = relu(pre) if mask is None else relu(pre) * mask
        logits = h @ p["W2"] + p["b2"]
        return softmax(logits), (xin, pre, mask, h)

    def _hidden_backward(self, cache, dlogits):
        xin, pre, mask, h = cache
        p = self.params
        grads = {"W2": h.T @ dlogits, "b2": dlogits.sum(axis=0, keepdims=True)}
        dh = dlogits @ p["W2"].T
        if mask is not None:
            dh = dh * mask
        dpre = dh * (pre > 0)
        grads["W1"] = xin.T @ dpre
        grads["b1"] = dpre.sum(axis=0, keepdims=True)
        return grads, dpre @ p["W1"].T


class ESN(_HiddenNet):
    kind = "esn"

    def __init__(self, mask, hidden: int = 8, init: InitSpec = InitSpec(), rng=None, threshold=None, zero=False):
        super().__init__()
        self.mask = np.asarray(mask, dtype=bool)
        if not self.mask.any():
            raise ValidationError("degenerate mask: no feature passes the similarity threshold")
        self.threshold = threshold
        self._init_layers(int(self.mask.sum()), hidden, init, rng, zero)

    def _forward(self, x, training, rng):
        if x.ndim != 2 or x.shape[1] != self.mask.size:
            raise ValueError(f"expected {self.mask.size} features, got shape {x.shape}")
        return self._hidden_forward(x[:, self.mask], training, rng)

    def _backward(self, cache, dlogits):
        grads, _ = self._hidden_backward(cache, dlogits)
        return grads

    def header(self):
        return {"architecture": self.kind, "threshold": self.threshold, "mask": self.mask.astype(int).tolist()}


class TBN(_HiddenNet):
    kind = "tbn"

    def __init__(
        self,
        products: np.ndarray,
        segment_of_column: np.ndarray,
        hidden: int = 8,
        init: InitSpec = InitSpec(),
        rng=None,
        dropout_rate: float = 0.2,
        zero: bool = False,
    ):
        super().__init__()
        self.products = np.asarray(products, dtype=float)  # (S, dim)
        self.segment_of_column = np.asarray(segment_of_column, dtype=int)
        self.dropout_rate = dropout_rate
        self.gate_mode = "soft"
        dim = self.products.shape[1]
        gw = np.zeros((dim, 1)) if zero else nnet.init_truncated_normal((dim, 1), init, rng)
        self.params = {"gw": gw, "gb": np.zeros((1, 1))}
        self._init_layers(self.segment_of_column.size, hidden, init, rng, zero)

    def gate_logits(self) -> np.ndarray:
        return (self.products @ self.params["gw"] + self.params["gb"]).ravel()

    def gates(self, mode: str | None = None) -> np.ndarray:
        z = self.gate_logits()
        if (mode or self.gate_mode) == "hard":
            return (z > 0).astype(float)
        return sigmoid(z)

    def _forward(self, x, training, rng):
        if x.ndim != 2 or x.shape[1] != self.segment_of_column.size:
            raise ValueError(f"expected {self.segment_of_column.size} features, got shape {x.shape}")
        mode = "soft" if training else self.gate_mode
        z = self.gate_logits()
        g = sigmoid(z) if mode == "soft" else (z > 0).astype(float)
        gated = x * g[self.segment_of_column]
        probs, hcache = self._hidden_forward(gated, training, rng)
        return probs, (x, g, mode, hcache)

    def _backward(self, cache, dlogits):
        x, g, mode, hcache = cache
        grads, dgated = self._hidden_backward(hcache, dlogits)
        if mode == "soft":
            dcol = np.sum(dgated * x, axis=0)
            dg = np.bincount(self.segment_of_column, weights=dcol, minlength=g.size)
            dz = dg * g * (1.0 - g)
            grads["gw"] = self.products.T @ dz[:, None]
            grads["gb"] = np.array([[dz.sum()]])
        else:
            grads["gw"] = np.zeros_like(self.params["gw"])
            grads["gb"] = np.zeros_like(self.params["gb"])
        return grads

    def header(self):
        return {
            "architecture": self.kind,
            "gate_mode": self.gate_mode,
            "dropout_rate": self.dropout_rate,
            "segment_of_column": self.segment_of_column.tolist(),
            "products": self.products.tolist(),
        }


def load_model(path: str | Path) -> Network:
    header, params = nnet.load_snapshot(path)
    kind = header.get("architecture")
    if kind == "bnn":
        model = BNN(params["W"].shape[0], zero=True)
    elif kind == "esn":
        model = ESN(header["mask"], params["W1"].shape[1], threshold=header.get("threshold"), zero=True)
    elif kind == "tbn":
        model = TBN(
            np.array(header["products"]),
            np.array(header["segment_of_column"]),
            params["W1"].shape[1],
            dropout_rate=header.get("dropout_rate", 0.0),
            zero=True,
        )
        model.gate_mode = header.get("gate_mode", "hard")
    else:
        raise ValueError(f"unknown architecture {kind!r}")
    model.params = params
    model.trained = True
    return model


# ---------------------------------------------------------------------------
# Gating helpers


def segment_similarities(segment_vecs: np.ndarray, quiz_vec: np.ndarray) -> np.ndarray:
    return np.array([cosine_similarity(v, quiz_vec) for v in segment_vecs])


def build_esn_mask(segment_vecs, quiz_vec, threshold: float | None, segment_of_column) -> np.ndarray:
    """Boolean feature mask: columns whose segment similarity exceeds ``threshold``.

    ``threshold=None`` uses the median segment similarity.
    """
    sims = segment_similarities(np.asarray(segment_vecs), np.asarray(quiz_vec))
    if threshold is None:
        threshold = float(np.median(sims))
    active = sims > threshold
    if not active.any():
        raise ValidationError(f"degenerate mask: no segment similarity exceeds {threshold:.4f}")
    return active[np.asarray(segment_of_column, dtype=int)]


def tbn_gate(model: TBN, mode: str = "soft") -> np.ndarray:
    return model.gates(mode)


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainTrace:
    epoch: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    auc: list[float] = field(default_factory=list)

    def append(self, epoch, loss, acc, auc):
        self.epoch.append(epoch)
        self.loss.append(loss)
        self.accuracy.append(acc)
        self.auc.append(auc)

    def rows(self):
        return zip(self.epoch, self.loss, self.accuracy, self.auc)


def build_model(
    kind: str,
    in_dim: int,
    config: TrainConfig,
    course: CourseText | None = None,
    segment_of_column: np.ndarray | None = None,
    rng=None,
) -> Network:
    init = InitSpec(stddev=config.init_stddev)
    if kind == "bnn":
        return BNN(in_dim, init, rng)
    if course is None or segment_of_column is None:
        raise ValidationError(f"model {kind!r} needs course text embeddings")
    if kind == "esn":
        mask = build_esn_mask(course.segment_vecs, course.quiz_vec, config.esn_threshold, segment_of_column)
        sims = segment_similarities(course.segment_vecs, course.quiz_vec)
        thr = float(np.median(sims)) if config.esn_threshold is None else config.esn_threshold
        return ESN(mask, config.hidden_dim, init, rng, threshold=thr)
    if kind == "tbn":
        rate = 0.2 if config.dropout_rate is None else config.dropout_rate
        return TBN(course.products, segment_of_column, config.hidden_dim, init, rng, dropout_rate=rate)
    raise ValueError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")


def _canonical_order(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # row order depends only on row contents, so callers' ordering is irrelevant
    keys = np.column_stack([x, y]).T[::-1]
    return np.lexsort(keys)


def resolve_class_weights(spec, labels) -> np.ndarray | None:
    if spec is None:
        return None
    if isinstance(spec, str):
        if spec != "balanced":
            raise ValueError(f"unknown class weight scheme {spec!r}")
        return nnet.inverse_frequency_weights(labels)
    return np.asarray(spec, dtype=float)


def _batch_stream(n: int, config: TrainConfig, rng: np.random.Generator):
    """Yield, per epoch, the list of index batches to train on.

    In ``"batch"`` mode an epoch is a single mini-batch taken from a running
    shuffled sweep that is reshuffled when exhausted; in ``"pass"`` mode an
    epoch is one full shuffled sweep.
    """
    bs = config.batch_size
    if config.epoch_mode == "pass":
        while True:
            perm = rng.permutation(n)
            yield [perm[i : i + bs] for i in range(0, n, bs)]
    perm, pos = rng.permutation(n), 0
    while True:
        if pos >= n:
            perm, pos = rng.permutation(n), 0
        yield [perm[pos : pos + bs]]
        pos += bs


def train(
    kind: str,
    x: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    course: CourseText | None = None,
    segment_of_column: np.ndarray | None = None,
    eval_data: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[Network, TrainTrace]:
    """Mini-batch Adam on weighted cross-entropy (see ``TrainConfig.epoch_mode``).

    The per-epoch trace records mean training loss, plus accuracy and AUC
    on ``eval_data`` (the training set when omitted). Evaluation data never
    affects the parameters.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    order = _canonical_order(x, y)
    x, y = x[order], y[order]
    init_ss, shuffle_ss, drop_ss = np.random.SeedSequence(config.seed).spawn(3)
    model = build_model(kind, x.shape[1], config, course, segment_of_column, np.random.default_rng(init_ss))
    shuffle_rng = np.random.default_rng(shuffle_ss)
    drop_rng = np.random.default_rng(drop_ss)
    weights_by_class = resolve_class_weights(config.class_weights, y)
    w = nnet.sample_weights(y, weights_by_class)
    ex, ey = eval_data if eval_data is not None else (x, y)
    ey = np.asarray(ey, dtype=int)
    both_classes = ey.min() != ey.max()

    state = nnet.AdamState(lr=config.lr)
    trace = TrainTrace()
    n = y.size
    batches = _batch_stream(n, config, shuffle_rng)
    best, stale = np.inf, 0
    for epoch in range(1, config.epochs + 1):
        total, seen = 0.0, 0
        for idx in next(batches):
            loss, grads = model.loss_and_grads(x[idx], y[idx], w[idx], training=True, rng=drop_rng)
            if not np.isfinite(loss):
                raise TrainingError(f"{kind}: non-finite loss at epoch {epoch}")
            nnet.adam_step(model.params, grads, state)
            total += loss * idx.size
            seen += idx.size
        epoch_loss = total / seen
        probs = _inference_proba(model, ex)
        trace.append(epoch, epoch_loss, accuracy(probs, ey), auc_roc(probs, ey) if both_classes else float("nan"))
        if config.early_stop_patience is not None:
            if epoch_loss < best - 1e-12:
                best, stale = epoch_loss, 0
            else:
                stale += 1
                if stale >= config.early_stop_patience:
                    break
    for name, p in model.params.items():
        if not np.all(np.isfinite(p)):
            raise TrainingError(f"{kind}: non-finite parameter {name}")
    if isinstance(model, TBN):
        model.gate_mode = "hard"
    model.trained = True
    return model, trace


def _inference_proba(model: Network, x: np.ndarray) -> np.ndarray:
    if isinstance(model, TBN):
        mode, model.gate_mode = model.gate_mode, "hard"
        try:
            return model.predict_proba(x)
        finally:
            model.gate_mode = mode
    return model.predict_proba(x)


def predict_proba(model: Network, x: np.ndarray) -> np.ndarray:
    """Pass-class probability per row; the TBN gates are evaluated hard."""
    if not model.trained:
        raise ValueError(f"{model.kind} model has not been trained")
    return model.predict_proba(np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# Gradient verification on random instances


def random_instance(kind: str, seed: int, n: int = 6, S: int = 3, F: int = 4, dim: int = 5, hidden: int = 4):
    """A small randomly initialised network with matching inputs and labels.

    Weights are drawn wider than the training init so that no ReLU sits
    within finite-difference reach of its kink by accident.
    """
    rng = np.random.default_rng(seed)
    seg_of_col = np.repeat(np.arange(S), F)
    init = InitSpec(stddev=0.5, seed=seed)
    x = rng.normal(size=(n, S * F))
    labels = rng.integers(0, 2, size=n)
    labels[:2] = (0, 1)
    if kind == "bnn":
        model: Network = BNN(S * F, init, rng)
    elif kind == "esn":
        mask = np.zeros(S * F, dtype=bool)
        mask[: 2 * F] = True
        model = ESN(mask, hidden, init, rng)
    elif kind == "tbn":
        model = TBN(rng.normal(size=(S, dim)), seg_of_col, hidden, init, rng, dropout_rate=0.0)
        model.params["gb"] = rng.normal(size=(1, 1))
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    for name, p in model.params.items():
        if name.startswith("b"):
            p += rng.normal(scale=0.1, size=p.shape)
    return model, x, labels


def gradcheck_kind(kind: str, seeds, h: float = 1e-5, class_weights=(2.0, 1.0)) -> float:
    """Worst relative gradient error for ``kind`` across random instances."""
    worst = 0.0
    for seed in seeds:
        model, x, labels = random_instance(kind, seed)
        worst = max(worst, nnet.gradient_check(model, x, labels, h=h, class_weights=class_weights))
    return worst
