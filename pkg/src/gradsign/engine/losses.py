"""Per-sample losses and their prediction-space derivatives."""

from __future__ import annotations

import numpy as np

LOSS_KINDS = ("mse", "cross_entropy")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for stability."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_labels(pred: np.ndarray, labels: np.ndarray, kind: str) -> None:
    if kind == "mse":
        if labels.ndim != 2 or labels.shape != pred.shape:
            raise ValueError("mse requires dense labels with the prediction shape")
    elif kind == "cross_entropy":
        if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
            raise ValueError("cross_entropy requires integer class-id labels")
        o = pred.shape[1]
        if labels.min(initial=0) < 0 or labels.max(initial=0) >= o:
            raise ValueError(f"label out of class range [0, {o})")
    else:
        raise ValueError(f"unknown loss kind {kind!r}")


def per_sample_losses(pred: np.ndarray, labels: np.ndarray, kind: str) -> np.ndarray:
    """Loss of each sample: ||e||^2 / o for mse, -log softmax[label] for cross_entropy."""
    pred = np.asarray(pred, dtype=np.float64)
    labels = np.asarray(labels)
    _check_labels(pred, labels, kind)
    if kind == "mse":
        diff = pred - labels
        return np.sum(diff * diff, axis=1) / pred.shape[1]
    z = pred - pred.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -log_probs[np.arange(pred.shape[0]), labels]


def loss_gradient(pred: np.ndarray, labels: np.ndarray, kind: str) -> np.ndarray:
    """d loss_i / d pred_i, one row per sample."""
    pred = np.asarray(pred, dtype=np.float64)
    labels = np.asarray(labels)
    _check_labels(pred, labels, kind)
    if kind == "mse":
        return 2.0 * (pred - labels) / pred.shape[1]
    grad = softmax(pred)
    grad[np.arange(pred.shape[0]), labels] -= 1.0
    return grad


def loss_gradient_tangent(
    pred: np.ndarray, pred_dot: np.ndarray, labels: np.ndarray, kind: str
) -> np.ndarray:
    """Directional derivative of :func:`loss_gradient` along a prediction tangent."""
    if kind == "mse":
        return 2.0 * pred_dot / pred.shape[1]
    p = softmax(pred)
    inner = np.sum(p * pred_dot, axis=1, keepdims=True)
    return p * (pred_dot - inner)
