"""Losses returning ``(value, gradient w.r.t. the prediction)``."""
import numpy as np

from ..errors import ShapeMismatch
from .layers import logistic, log_softmax

LOG_FLOOR = np.log(1e-12)


def mse(pred, target):
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def _weights(weight, n):
    w = np.broadcast_to(np.asarray(weight, dtype=np.float64), (n,))
    if np.any(w <= 0):
        raise ValueError("sample weights must be positive")
    return w


def cross_entropy(logits, labels, weight=1.0):
    """Batch mean of ``-weight * log softmax(logits)[label]``; log clamped at 1e-12."""
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n = logits.shape[0]
    if labels.shape[0] != n:
        raise ShapeMismatch(f"{n} logit rows but {labels.shape[0]} labels")
    w = _weights(weight, n)
    logp = log_softmax(logits)
    picked = logp[np.arange(n), labels]
    live = picked > LOG_FLOOR
    value = float(np.mean(-w * np.maximum(picked, LOG_FLOOR)))
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    grad *= (w * live / n)[:, None]
    return value, grad


def bce_multilabel(logits, bits, weight=1.0):
    """Batch mean of ``weight * mean_l BCE(logit_l, bit_l)``; logs clamped at 1e-12."""
    logits = np.atleast_2d(logits)
    bits = np.atleast_2d(np.asarray(bits, dtype=np.float64))
    if logits.shape != bits.shape:
        raise ShapeMismatch(f"bce shapes differ: {logits.shape} vs {bits.shape}")
    n, n_labels = logits.shape
    w = _weights(weight, n)
    # log sigma(z) = -softplus(-z), log(1 - sigma(z)) = -softplus(z)
    log_p = -np.logaddexp(0.0, -logits)
    log_q = -np.logaddexp(0.0, logits)
    live_p = log_p > LOG_FLOOR
    live_q = log_q > LOG_FLOOR
    per = -(bits * np.maximum(log_p, LOG_FLOOR) + (1.0 - bits) * np.maximum(log_q, LOG_FLOOR))
    value = float(np.mean(w * per.mean(axis=1)))
    sig = logistic(logits)
    grad = -bits * (1.0 - sig) * live_p + (1.0 - bits) * sig * live_q
    grad *= (w / (n * n_labels))[:, None]
    return value, grad
