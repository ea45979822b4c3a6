"""Ridge-penalized logistic and least-squares fits on sieve features.

Both objectives are sums over the masked rows plus ``ridge/2 * ||w||^2`` on
every column except a constant intercept column.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ..errors import ConvergenceError, EstimationError

__all__ = [
    "GlmFit",
    "fit_logistic",
    "fit_least_squares",
    "logistic_loss",
    "RIDGE_DEFAULT",
]

RIDGE_DEFAULT = 1e-6
_P_FLOOR = np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class GlmFit:
    weights: np.ndarray
    link: str  # "logit" or "identity"
    iterations: int = 0
    grad_norm: float = 0.0
    converged: bool = True
    ridge: float = RIDGE_DEFAULT
    diagnostics: dict = field(default_factory=dict)

    def linear(self, F) -> np.ndarray:
        return np.asarray(F, dtype=float) @ self.weights

    def predict(self, F) -> np.ndarray:
        eta = self.linear(F)
        if self.link == "logit":
            return np.clip(expit(eta), _P_FLOOR, 1.0 - _P_FLOOR)
        return eta


def _as_rows(F, mask):
    F = np.asarray(F, dtype=float)
    if mask is None:
        return F, np.arange(F.shape[0])
    mask = np.asarray(mask)
    idx = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)
    return F[idx], idx


def _penalty_vector(F: np.ndarray, ridge: float) -> np.ndarray:
    pen = np.full(F.shape[1], float(ridge))
    const = np.all(F == 1.0, axis=0) if F.shape[0] else np.zeros(F.shape[1], bool)
    pen[const] = 0.0
    return pen


def logistic_loss(F, y, w, ridge: float = 0.0, pen: np.ndarray | None = None) -> float:
    """Summed ``-y f + log(1 + e^f)`` plus the ridge term."""
    f = np.asarray(F) @ w
    pen = np.full(len(w), ridge) if pen is None else pen
    return float(np.sum(np.logaddexp(0.0, f) - y * f) + 0.5 * np.sum(pen * w * w))


def fit_logistic(F, labels, mask=None, ridge: float = RIDGE_DEFAULT, tol: float = 1e-8,
                 max_iter: int = 500, strict: bool = False) -> GlmFit:
    """Newton iterations with backtracking on the penalized logistic loss.

    Stops when the gradient norm of the summed loss is at most ``tol`` times
    the number of rows, i.e. the mean-loss gradient is below ``tol``.
    """
    Fm, idx = _as_rows(F, mask)
    y = np.asarray(labels, dtype=float)[idx]
    if y.size == 0:
        raise EstimationError("logistic fit on an empty sample")
    if y.min() == y.max():
        raise EstimationError(f"degenerate labels: all {int(y[0])} among {y.size} rows")
    pen = _penalty_vector(Fm, ridge)
    q = Fm.shape[1]
    w = np.zeros(q)
    loss = logistic_loss(Fm, y, w, pen=pen)
    tol_abs = tol * max(1.0, float(y.size))
    gnorm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(Fm @ w)
        grad = Fm.T @ (mu - y) + pen * w
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol_abs:
            it -= 1
            break
        s = mu * (1.0 - mu)
        H = (Fm * s[:, None]).T @ Fm + np.diag(pen)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            w_new = w - t * step
            new_loss = logistic_loss(Fm, y, w_new, pen=pen)
            if new_loss <= loss + 1e-4 * t * float(grad @ -step) or t < 1e-10:
                break
            t *= 0.5
        if t < 1e-10 and new_loss > loss:
            break
        w, loss = w_new, new_loss
    else:
        mu = expit(Fm @ w)
        gnorm = float(np.linalg.norm(Fm.T @ (mu - y) + pen * w))
    converged = gnorm <= tol_abs
    diag = {"iterations": it, "grad_norm": gnorm, "loss": loss, "rows": int(y.size)}
    if not converged:
        msg = f"logistic fit stopped after {it} iterations with gradient norm {gnorm:.3e} > {tol_abs:.3g}"
        if strict:
            raise ConvergenceError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return GlmFit(w, "logit", it, gnorm, converged, ridge, diag)


def fit_least_squares(F, targets, mask=None, ridge: float = RIDGE_DEFAULT) -> GlmFit:
    """Solve the ridge normal equations ``(F'F + ridge I) w = F'y``."""
    Fm, idx = _as_rows(F, mask)
    y = np.asarray(targets, dtype=float)[idx]
    if y.size == 0:
        raise EstimationError("least-squares fit on an empty sample")
    pen = _penalty_vector(Fm, ridge)
    q = Fm.shape[1]
    if ridge == 0.0:
        rank = np.linalg.matrix_rank(Fm)
        if rank < q:
            raise EstimationError(
                f"rank-deficient design: rank {rank} < {q} columns on {y.size} rows and no ridge"
            )
    # augmented least squares: same minimizer as the normal equations, better conditioned
    Aug = np.vstack([Fm, np.diag(np.sqrt(pen))])
    w = np.linalg.lstsq(Aug, np.concatenate([y, np.zeros(q)]), rcond=None)[0]
    r = y - Fm @ w
    grad = -Fm.T @ r + pen * w
    return GlmFit(w, "identity", 1, float(np.linalg.norm(grad)), True, ridge,
                  {"rows": int(y.size), "rss": float(r @ r)})
