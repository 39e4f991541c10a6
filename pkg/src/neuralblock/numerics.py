"""Small log-space helpers shared across the package.

All routines tolerate -inf entries (zero probability) and never emit NaN
for them; -inf in means -inf out.
"""

from __future__ import annotations

import math

import numpy as np


def logsumexp(a, axis=None, keepdims=False):
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        shape = a.sum(axis=axis, keepdims=keepdims).shape
        return np.full(shape, -np.inf) if shape else -np.inf
    if axis is None and not keepdims:
        m = float(a.max())
        if m == -np.inf:
            return -np.inf
        if not math.isfinite(m):  # +inf or nan dominates every finite entry
            return m
        return m + math.log(float(np.exp(a - m).sum()))
    m = a.max(axis=axis, keepdims=True)
    # all--inf slices: shift by 0 so exp(-inf) = 0 instead of exp(nan)
    shift = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        out = np.log(np.exp(a - shift).sum(axis=axis, keepdims=True)) + shift
    if keepdims:
        return out
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def log_softmax(a: np.ndarray, axis: int = -1) -> np.ndarray:
    return a - logsumexp(a, axis=axis, keepdims=True)


def softmax(a: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.exp(log_softmax(a, axis=axis))


def softplus(a: np.ndarray) -> np.ndarray:
    # max-shift form: log(1 + e^a) = max(a, 0) + log1p(e^{-|a|})
    return np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))


def sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a, dtype=np.float64)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def normalized_probs(log_weights: np.ndarray) -> np.ndarray:
    """exp-normalize a log-weight vector; raises if all weights are zero."""
    z = logsumexp(log_weights)
    if np.isneginf(z):
        raise ValueError("all log weights are -inf")
    return np.exp(log_weights - z)
