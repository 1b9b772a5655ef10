"""Shared numerics for the probabilistic learners."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

# Hard label of every probabilistic model is 1[p > THRESHOLD].
THRESHOLD = 0.5

PROB_CLIP = 1e-12


def sigmoid(z):
    return expit(z)


def hard_labels(p) -> np.ndarray:
    return (np.asarray(p) > THRESHOLD).astype(np.int8)


def log_loss(y, p) -> float:
    """Mean binary cross-entropy with probabilities clamped away from 0 and 1."""
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLIP, 1.0 - PROB_CLIP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def logistic_grad_hess(margin, y):
    """Gradient and hessian of the logistic loss with respect to the margin.

    With ``p = sigmoid(margin)`` these are ``p - y`` and ``p (1 - p)``.
    """
    p = expit(np.asarray(margin, dtype=np.float64))
    return p - y, p * (1.0 - p)


def logistic_loss_margin(margin, y):
    """Per-row logistic loss ``log(1 + e^m) - y m`` without clamping."""
    margin = np.asarray(margin, dtype=np.float64)
    return np.logaddexp(0.0, margin) - y * margin


def check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a non-empty 2-D array")
    if y.shape != (X.shape[0],):
        raise ValueError("y must have one label per row")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return X, y.astype(np.int8)


def require_both_classes(y) -> None:
    if y.min() == y.max():
        raise ValueError("training labels must contain both classes")


def check_features(X, n_features: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got {X.shape[1]}")
    return X


def canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row permutation that depends only on row contents.

    Fitting on rows in this order makes a learner's output independent of the
    order the rows arrived in, float summation order included.
    """
    keys = np.column_stack([X, y]).T
    return np.lexsort(keys[::-1])
