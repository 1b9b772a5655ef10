"""L2-regularized logistic regression solved by damped Newton iterations.

Objective: ``mean(log(1 + e^z) - y z) + l2/2 * ||w||^2`` with ``z = Xw + b``;
the bias is not penalised.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .common import check_features, check_xy, logistic_loss_margin, require_both_classes, sigmoid


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class LogisticParams:
    max_iters: int = 100
    tolerance: float = 1e-8
    l2: float = 1e-4


@dataclass(eq=False)
class LogisticModel:
    weights: np.ndarray
    bias: float
    feature_names: tuple[str, ...]
    n_iter: int = 0
    grad_norm: float = 0.0
    converged: bool = True

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def decision_function(self, X) -> np.ndarray:
        X = check_features(X, self.n_features)
        return X @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.decision_function(X))


def objective(theta: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Regularized mean loss at ``theta = [w..., b]``."""
    w, b = theta[:-1], theta[-1]
    z = X @ w + b
    return float(np.mean(logistic_loss_margin(z, y)) + 0.5 * l2 * (w @ w))


def gradient(theta: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> np.ndarray:
    w, b = theta[:-1], theta[-1]
    r = sigmoid(X @ w + b) - y
    n = X.shape[0]
    g = np.empty_like(theta)
    g[:-1] = X.T @ r / n + l2 * w
    g[-1] = r.sum() / n
    return g


def hessian(theta: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> np.ndarray:
    w, b = theta[:-1], theta[-1]
    p = sigmoid(X @ w + b)
    s = p * (1.0 - p)
    Xa = np.column_stack([X, np.ones(X.shape[0])])
    H = (Xa * s[:, None]).T @ Xa / X.shape[0]
    H[np.arange(len(w)), np.arange(len(w))] += l2
    return H


def fit_logistic(X, y, params: LogisticParams | None = None, feature_names: Sequence[str] | None = None) -> LogisticModel:
    params = params or LogisticParams()
    X, y = check_xy(X, y)
    require_both_classes(y)
    y = y.astype(np.float64)
    D = X.shape[1]
    if feature_names is None:
        feature_names = tuple(f"x{j}" for j in range(D))
    theta = np.zeros(D + 1)
    f = objective(theta, X, y, params.l2)
    g = gradient(theta, X, y, params.l2)
    it = 0
    while it < params.max_iters and np.linalg.norm(g) >= params.tolerance:
        it += 1
        H = hessian(theta, X, y, params.l2)
        H[np.diag_indices_from(H)] += 1e-12
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = g
        # backtracking (Armijo) keeps every accepted step a descent step
        t = 1.0
        slope = float(g @ step)
        while True:
            cand = theta - t * step
            fc = objective(cand, X, y, params.l2)
            if fc <= f - 1e-4 * t * slope or t < 1e-10:
                break
            t *= 0.5
        if fc > f:
            break
        theta, f = cand, fc
        g = gradient(theta, X, y, params.l2)
    gn = float(np.linalg.norm(g))
    converged = gn < params.tolerance
    if not converged:
        warnings.warn(
            f"logistic regression stopped after {it} iterations with gradient norm {gn:.3g}",
            ConvergenceWarning,
            stacklevel=2,
        )
    return LogisticModel(theta[:-1].copy(), float(theta[-1]), tuple(feature_names), it, gn, converged)
