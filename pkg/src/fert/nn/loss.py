"""Softmax cross-entropy with the max-subtraction trick."""
from __future__ import annotations

import numpy as np

from ..errors import NumericError, ShapeError


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    The loss itself is accumulated in float64; the gradient
    (softmax - onehot) / n comes back in the logits' dtype.
    """
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [n][classes] logits, got {logits.shape}")
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {logits.shape[0]}")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise NumericError(f"label out of range for {logits.shape[1]} classes")
    if not np.isfinite(logits).all():
        raise NumericError("non-finite logits in cross_entropy")

    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    n = logits.shape[0]
    loss = float((log_norm - z[np.arange(n), labels]).mean())

    probs = softmax(z)
    probs[np.arange(n), labels] -= 1.0
    grad = (probs / n).astype(logits.dtype)
    return loss, grad
