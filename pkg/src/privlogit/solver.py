"""Newton (IRLS) logistic regression with an optional ridge penalty.

The same update runs on plaintext data and on the server's encrypted data.
In encrypted mode the response enters only through the aggregated row vector
``Z* = Y^T X B`` and the penalty is ``Lambda B*`` with ``B* = B^T B``; with
both supplied as identities the arithmetic is the plaintext update.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from scipy.stats import rankdata

from privlogit.linalg import SingularMatrixError, as_matrix, solve_equilibrated

DIVERGENCE_LIMIT = 1e8


class DivergenceError(RuntimeError):
    pass


class UndefinedAUCError(ValueError):
    pass


@dataclass
class FitConfig:
    lam: float = 0.0
    max_iters: int = 50
    tol: float = 1e-8
    beta_init: np.ndarray | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("ridge parameter must be non-negative")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class FitResult:
    beta: np.ndarray
    iterations: int
    converged: bool
    step_norm_history: list[float] = field(default_factory=list)
    mode: Literal["plaintext", "encrypted"] = "plaintext"

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "iterations": self.iterations,
            "converged": self.converged,
            "beta": self.beta.tolist(),
            "step_norm_history": self.step_norm_history,
        }


def add_intercept(x) -> np.ndarray:
    x = as_matrix(x, "x")
    return np.hstack([np.ones((x.shape[0], 1)), x])


def logistic(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def probabilities(x, beta) -> np.ndarray:
    """Fitted probabilities for a design matrix that already holds the intercept column."""
    return logistic(np.asarray(x) @ np.asarray(beta, dtype=np.float64))


def predict(beta, x_new) -> np.ndarray | float:
    """Probability of label 1 for one row (scalar) or a batch of rows."""
    x_new = np.asarray(x_new, dtype=np.float64)
    score = logistic(np.atleast_1d(x_new @ np.asarray(beta, dtype=np.float64)))
    return float(score[0]) if x_new.ndim == 1 else score


def ridge_matrix(dim: int, lam: float) -> np.ndarray:
    """``diag(0, lam, ..., lam)``: the intercept is never penalised."""
    d = np.full(dim, float(lam))
    d[0] = 0.0
    return np.diag(d)


def penalty_matrix(dim: int, lam: float, b_star=None) -> np.ndarray:
    lam_mat = ridge_matrix(dim, lam)
    return lam_mat if b_star is None else lam_mat @ as_matrix(b_star, "b_star")


def _update(x, beta, z, penalty):
    prob = probabilities(x, beta)
    w = prob * (1.0 - prob)
    hessian = (x.T * w) @ x
    # increment form of the Newton update: beta + (H + P)^-1 [z - X^T p - P beta]
    grad = z - x.T @ prob - penalty @ beta
    try:
        # encrypted Hessians are badly scaled, so equilibrate before the pivot test
        step = solve_equilibrated(hessian + penalty, grad)
    except SingularMatrixError as exc:
        raise SingularMatrixError(
            exc.pivot, exc.threshold,
            f"{exc} in the Newton system; the data may be separable or collinear, try lam > 0",
        ) from None
    return beta + step, prob, w


def newton_step(x, beta, *, y=None, z=None, lam: float = 0.0, b_star=None) -> np.ndarray:
    """One Newton update.

    Pass ``y`` for plaintext data or the aggregated response ``z`` (length
    ``p+1``) for encrypted data; ``b_star`` is the padded ridge accumulator.
    """
    x = as_matrix(x, "x")
    beta = np.asarray(beta, dtype=np.float64)
    if (y is None) == (z is None):
        raise ValueError("give exactly one of y (plaintext) or z (encrypted)")
    if x.shape[1] != beta.size:
        raise ValueError(f"beta has {beta.size} entries, design has {x.shape[1]} columns")
    z = x.T @ np.asarray(y, dtype=np.float64) if z is None else np.asarray(z, dtype=np.float64)
    return _update(x, beta, z, penalty_matrix(x.shape[1], lam, b_star))[0]


IterationHook = Callable[[int, np.ndarray, np.ndarray, np.ndarray], None]


def fit(
    x,
    *,
    y=None,
    z=None,
    config: FitConfig | None = None,
    b_star=None,
    on_iteration: IterationHook | None = None,
) -> FitResult:
    """Iterate Newton updates from ``config.beta_init`` (zeros by default).

    Stops when the infinity norm of the coefficient step drops below
    ``config.tol``.  ``on_iteration(k, beta_old, prob, weights)`` sees the
    quantities each update was computed from.
    """
    config = config or FitConfig()
    x = as_matrix(x, "x")
    if (y is None) == (z is None):
        raise ValueError("give exactly one of y (plaintext) or z (encrypted)")
    mode = "plaintext" if z is None else "encrypted"
    if z is None:
        z = x.T @ np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    dim = x.shape[1]
    penalty = penalty_matrix(dim, config.lam, b_star)
    beta = np.zeros(dim) if config.beta_init is None else np.array(config.beta_init, dtype=np.float64)

    history: list[float] = []
    converged = False
    for k in range(config.max_iters):
        new, prob, w = _update(x, beta, z, penalty)
        if on_iteration is not None:
            on_iteration(k, beta, prob, w)
        step = float(np.max(np.abs(new - beta)))
        history.append(step)
        beta = new
        if not np.isfinite(step) or step > DIVERGENCE_LIMIT:
            raise DivergenceError(f"Newton step norm {step:.3e} at iteration {k + 1}")
        if step < config.tol:
            converged = True
            break
    return FitResult(beta=beta, iterations=len(history), converged=converged,
                     step_norm_history=history, mode=mode)


def log_likelihood(x, y, beta, lam: float = 0.0) -> float:
    """Penalised log-likelihood ``l(beta) - lam/2 * ||beta[1:]||^2``."""
    eta = np.asarray(x) @ np.asarray(beta)
    y = np.asarray(y, dtype=np.float64)
    # log(1 + e^eta) computed without overflow
    ll = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    return ll - 0.5 * lam * float(np.sum(np.asarray(beta)[1:] ** 2))


def gradient(x, y, beta, lam: float = 0.0) -> np.ndarray:
    x = as_matrix(x, "x")
    prob = probabilities(x, beta)
    return x.T @ (np.asarray(y, dtype=np.float64) - prob) - ridge_matrix(x.shape[1], lam) @ beta


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
