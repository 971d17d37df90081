"""A small softmax MLP with hand-written backprop and a plain SGD loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from auxlearn import loss as L
from auxlearn.errors import DomainError, ParseError

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "tanh")
LOSS_KINDS = ("cce", "wcce")
CHECKPOINT_MAGIC = "auxlearn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(eq=False)
class MlpModel:
    """Weights are stored ``(fan_in, fan_out)`` so a layer computes ``x @ W + b``."""

    layer_dims: tuple
    weights: list
    biases: list
    activation: str = "tanh"

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise DomainError("parameter count does not match layer_dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[i], self.layer_dims[i + 1])
            if w.shape != shape or b.shape != (shape[1],):
                raise DomainError(f"layer {i}: expected W{shape}, b({shape[1]},)")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise DomainError(f"layer {i} has non-finite parameters")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "MlpModel":
        return MlpModel(
            self.layer_dims,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )

    def parameters(self):
        """Yield every parameter array, weights then bias, layer by layer."""
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def __eq__(self, other):
        if not isinstance(other, MlpModel):
            return NotImplemented
        return (
            self.layer_dims == other.layer_dims
            and self.activation == other.activation
            and all(np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters()))
        )


@dataclass
class Gradients:
    weights: list
    biases: list

    def arrays(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b


@dataclass
class ForwardCache:
    inputs: list          # input to each layer
    pre_activations: list  # x @ W + b for each hidden layer
    probs: np.ndarray
    batched: bool


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    loss_kind: str = "wcce"
    class_weights: Optional[L.ClassWeights] = None
    loss_config: L.LossConfig = field(default_factory=L.LossConfig)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise DomainError("learning_rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise DomainError("epochs must be >= 0 and batch_size >= 1")
        if self.loss_kind not in LOSS_KINDS:
            raise DomainError(f"unknown loss kind {self.loss_kind!r}")
        if self.loss_kind == "wcce" and self.class_weights is None:
            raise DomainError("wcce training requires class_weights")


@dataclass
class TrainReport:
    loss_history: list
    model: MlpModel
    epochs_run: int


def init_model(layer_dims: Sequence[int], activation: str = "tanh", seed: int = 0) -> MlpModel:
    """Glorot-uniform weights and zero biases, fully determined by ``seed``."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise DomainError(f"layer_dims must list at least two positive sizes, got {layer_dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(tuple(dims), weights, biases, activation)


def _activate(z, kind):
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def _activate_grad(z, kind):
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return (z > 0).astype(np.float64)


def forward(model: MlpModel, features):
    """Return ``(probabilities, cache)`` for one example or a batch."""
    x = np.asarray(features, dtype=np.float64)
    batched = x.ndim == 2
    if x.ndim not in (1, 2) or x.shape[-1] != model.input_dim:
        raise DomainError(f"expected features of dim {model.input_dim}, got shape {x.shape}")
    h = np.atleast_2d(x)
    inputs, pre = [], []
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(h)
        z = h @ w + b
        if i == last:
            probs = L.softmax(z)
        else:
            pre.append(z)
            h = _activate(z, model.activation)
    cache = ForwardCache(inputs, pre, probs, batched)
    return (probs if batched else probs[0]), cache


def loss_value(probs, y, loss_kind, class_weights=None, cfg=L.LossConfig()):
    if loss_kind == "wcce":
        return L.wcce_loss(probs, y, class_weights, cfg)
    if loss_kind == "cce":
        return L.cce_loss(probs, y, cfg)
    raise DomainError(f"unknown loss kind {loss_kind!r}")


def backward(model: MlpModel, cache: ForwardCache, y, loss_kind: str,
             class_weights: Optional[L.ClassWeights] = None,
             cfg: L.LossConfig = L.LossConfig()) -> Gradients:
    """Gradients of the batch-mean loss for the inputs that produced ``cache``."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    p = cache.probs
    if y.shape != p.shape:
        raise DomainError(f"targets {y.shape} do not match predictions {p.shape}")
    if len(cache.inputs) != len(model.weights):
        raise DomainError("cache was not produced by this model")
    if loss_kind == "wcce":
        if class_weights is None:
            raise DomainError("wcce needs class weights")
        grad_p = L.wcce_grad(p, y, class_weights, cfg)
    elif loss_kind == "cce":
        grad_p = L.cce_grad(p, y, cfg)
    else:
        raise DomainError(f"unknown loss kind {loss_kind!r}")

    delta = L.softmax_backward(p, grad_p)
    n_layers = len(model.weights)
    grad_w = [None] * n_layers
    grad_b = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        grad_w[i] = cache.inputs[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * _activate_grad(cache.pre_activations[i - 1], model.activation)
    return Gradients(grad_w, grad_b)


def sgd_step(model: MlpModel, grads: Gradients, learning_rate: float) -> MlpModel:
    """Return a new model with ``param - learning_rate * grad`` applied."""
    if len(grads.weights) != len(model.weights):
        raise DomainError("gradient structure does not match model")
    new_w, new_b = [], []
    for w, b, gw, gb in zip(model.weights, model.biases, grads.weights, grads.biases):
        if gw.shape != w.shape or gb.shape != b.shape:
            raise DomainError("gradient shape does not match parameter shape")
        new_w.append(w - learning_rate * gw)
        new_b.append(b - learning_rate * gb)
    return MlpModel(model.layer_dims, new_w, new_b, model.activation)


def _stack(dataset, num_classes):
    if len(dataset) == 0:
        raise DomainError("training set is empty")
    x = np.array([ex.features for ex in dataset], dtype=np.float64)
    labels = np.array([ex.label for ex in dataset], dtype=np.int64)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise DomainError(f"labels must lie in [0, {num_classes})")
    return x, labels


def train(model: MlpModel, dataset, cfg: TrainConfig) -> TrainReport:
    """Minibatch SGD over ``dataset`` (a sequence of ``LabeledExample``).

    Each epoch reshuffles with a generator seeded from ``cfg.seed``. The
    recorded epoch loss is the example-weighted mean of the minibatch losses
    seen during that epoch.
    """
    k = model.num_classes
    x, labels = _stack(dataset, k)
    if x.shape[1] != model.input_dim:
        raise DomainError(f"features have dim {x.shape[1]}, model expects {model.input_dim}")
    if cfg.class_weights is not None and cfg.class_weights.num_classes != k:
        raise DomainError("class weights do not match the model's output size")
    y = np.eye(k)[labels]
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    n = len(labels)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            probs, cache = forward(model, x[idx])
            total += loss_value(probs, y[idx], cfg.loss_kind, cfg.class_weights, cfg.loss_config) * len(idx)
            grads = backward(model, cache, y[idx], cfg.loss_kind, cfg.class_weights, cfg.loss_config)
            # same arithmetic as sgd_step, applied to the private copy
            for param, g in zip(model.parameters(), grads.arrays()):
                param -= cfg.learning_rate * g
        if not np.isfinite(total):
            raise DomainError(f"training diverged at epoch {epoch + 1}; lower the learning rate")
        history.append(total / n)
        logger.debug("epoch %d loss %.6f", epoch + 1, history[-1])
    return TrainReport(history, model, cfg.epochs)


def predict(model: MlpModel, features):
    """Argmax class index (lowest index wins ties); an array for batched input."""
    probs, _ = forward(model, features)
    return np.argmax(probs, axis=-1) if probs.ndim == 2 else int(np.argmax(probs))


def save_checkpoint(model: MlpModel, path) -> None:
    Path(path).write_text(dumps_checkpoint(model), encoding="utf-8")


def load_checkpoint(path) -> MlpModel:
    return loads_checkpoint(Path(path).read_text(encoding="utf-8"))


def dumps_checkpoint(model: MlpModel) -> str:
    """Serialize to plain text.

    Layout::

        auxlearn-checkpoint 1
        activation tanh
        layer_dims 8 32 3
        W0 8 32
        <one row of W0 per line>
        b0 32
        <b0 on one line>
        ...

    Values use Python's shortest round-trip ``repr``, so loading is bit-exact.
    """
    lines = [
        f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
        f"activation {model.activation}",
        "layer_dims " + " ".join(str(d) for d in model.layer_dims),
    ]
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        lines.append(f"W{i} {w.shape[0]} {w.shape[1]}")
        lines.extend(" ".join(repr(float(v)) for v in row) for row in w)
        lines.append(f"b{i} {b.shape[0]}")
        lines.append(" ".join(repr(float(v)) for v in b))
    return "\n".join(lines) + "\n"


def loads_checkpoint(text: str) -> MlpModel:
    lines = text.splitlines()
    pos = 0

    def take(expected_tag):
        nonlocal pos
        if pos >= len(lines):
            raise ParseError(f"unexpected end of checkpoint, wanted {expected_tag!r}", pos + 1)
        parts = lines[pos].split()
        pos += 1
        if expected_tag is not None and (not parts or parts[0] != expected_tag):
            raise ParseError(f"expected {expected_tag!r}", pos)
        return parts[1:] if expected_tag is not None else parts

    def floats(count):
        vals = take(None)
        if len(vals) != count:
            raise ParseError(f"expected {count} values, got {len(vals)}", pos)
        try:
            return [float(v) for v in vals]
        except ValueError as exc:
            raise ParseError(str(exc), pos) from None

    header = take(CHECKPOINT_MAGIC)
    if header != [str(CHECKPOINT_VERSION)]:
        raise ParseError(f"unsupported checkpoint version {header}", 1)
    (activation,) = take("activation") or [None]
    try:
        dims = [int(d) for d in take("layer_dims")]
    except ValueError:
        raise ParseError("bad layer_dims", pos) from None
    weights, biases = [], []
    for i in range(len(dims) - 1):
        shape = tuple(int(v) for v in take(f"W{i}"))
        if shape != (dims[i], dims[i + 1]):
            raise ParseError(f"W{i} shape {shape} does not match layer_dims", pos)
        weights.append(np.array([floats(shape[1]) for _ in range(shape[0])]).reshape(shape))
        (size,) = (int(v) for v in take(f"b{i}"))
        biases.append(np.array(floats(size)))
    return MlpModel(tuple(dims), weights, biases, activation)
