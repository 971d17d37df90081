"""Categorical cross-entropy, its class-weighted variant, and softmax.

Every loss takes probabilities ``p`` and one-hot targets ``y`` of shape ``(K,)``
for one example or ``(N, K)`` for a batch. Per-example losses are summed over
classes and averaged over the batch. Gradients are taken with respect to ``p``
of that reduced value, so a batch gradient carries the ``1/N`` factor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from auxlearn.errors import DomainError

DEFAULT_EPSILON = 1e-7


@dataclass(frozen=True)
class LossConfig:
    """``epsilon`` is added inside every log (and every reciprocal in the gradient)."""

    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not self.epsilon >= 0.0:
            raise DomainError(f"epsilon must be non-negative, got {self.epsilon}")


@dataclass(frozen=True, eq=False)
class ClassWeights:
    """Per-class weights for the positive (``y == 1``) and negative terms."""

    w_p: np.ndarray
    w_n: np.ndarray

    def __post_init__(self):
        w_p = np.array(self.w_p, dtype=np.float64)
        w_n = np.array(self.w_n, dtype=np.float64)
        if w_p.ndim != 1 or w_p.shape != w_n.shape:
            raise DomainError("w_p and w_n must be 1-d vectors of equal length")
        if w_p.size < 2:
            raise DomainError("class weights need at least two classes")
        if not (np.all(np.isfinite(w_p)) and np.all(np.isfinite(w_n))):
            raise DomainError("class weights must be finite")
        w_p.setflags(write=False)
        w_n.setflags(write=False)
        object.__setattr__(self, "w_p", w_p)
        object.__setattr__(self, "w_n", w_n)

    @property
    def num_classes(self) -> int:
        return self.w_p.size

    def scaled(self, factor: float) -> "ClassWeights":
        return ClassWeights(self.w_p * factor, self.w_n * factor)

    def __eq__(self, other):
        if not isinstance(other, ClassWeights):
            return NotImplemented
        return np.array_equal(self.w_p, other.w_p) and np.array_equal(self.w_n, other.w_n)

    def __repr__(self):
        return f"ClassWeights(w_p={self.w_p.tolist()}, w_n={self.w_n.tolist()})"


def compute_class_weights(class_ratios) -> ClassWeights:
    """Derive weights from class ratios (or raw counts).

    With ``T = sum(r)``, the positive weight of class ``c`` is ``(T - r[c]) / T``,
    so rarer classes weigh more, and the negative weight is ``1 - w_p[c]``.
    Scaling every ratio by the same constant leaves the result unchanged.

    >>> compute_class_weights([1, 3]).w_p.tolist()
    [0.75, 0.25]
    """
    r = np.asarray(class_ratios, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise DomainError("need a vector of at least two class ratios")
    if not np.all(np.isfinite(r)) or np.any(r <= 0):
        raise DomainError(f"class ratios must be finite and positive, got {r.tolist()}")
    total = r.sum()
    w_p = (total - r) / total
    return ClassWeights(w_p, 1.0 - w_p)


def _as_pair(p, y):
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape or p.ndim not in (1, 2):
        raise DomainError(f"shape mismatch: p {p.shape} vs y {y.shape}")
    return p, y


def _check_weights(w: ClassWeights, k: int):
    if w.num_classes != k:
        raise DomainError(f"weights cover {w.num_classes} classes, predictions have {k}")


def _batch_mean(per_class):
    total = per_class.sum(axis=-1)
    return float(total.mean()) if per_class.ndim == 2 else float(total)


def wcce_loss(p, y, w: ClassWeights, cfg: LossConfig = LossConfig()) -> float:
    p, y = _as_pair(p, y)
    _check_weights(w, p.shape[-1])
    eps = cfg.epsilon
    per_class = -(w.w_p * y * np.log(p + eps) + w.w_n * (1.0 - y) * np.log(1.0 - p + eps))
    return _batch_mean(per_class)


def wcce_grad(p, y, w: ClassWeights, cfg: LossConfig = LossConfig()) -> np.ndarray:
    p, y = _as_pair(p, y)
    _check_weights(w, p.shape[-1])
    eps = cfg.epsilon
    g = -w.w_p * y / (p + eps) + w.w_n * (1.0 - y) / (1.0 - p + eps)
    if g.ndim == 2:
        g /= g.shape[0]
    return g


def cce_loss(p, y, cfg: LossConfig = LossConfig()) -> float:
    p, y = _as_pair(p, y)
    return _batch_mean(-y * np.log(p + cfg.epsilon))


def cce_grad(p, y, cfg: LossConfig = LossConfig()) -> np.ndarray:
    p, y = _as_pair(p, y)
    g = -y / (p + cfg.epsilon)
    if g.ndim == 2:
        g /= g.shape[0]
    return g


def softmax(logits) -> np.ndarray:
    """Row-wise softmax of a ``(K,)`` or ``(N, K)`` array, stable for large logits."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim not in (1, 2) or z.shape[-1] < 2:
        raise DomainError(f"softmax needs at least two logits, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise DomainError("softmax input contains non-finite values")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(p: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. softmax outputs back to the logits."""
    return p * (grad_p - np.sum(grad_p * p, axis=-1, keepdims=True))
