"""Calibrated Black-Litterman posterior, allocation solve and future predictor.

All functions accept numpy arrays or :class:`Tensor` objects and return
tensors, so the same code path serves training (with gradients) and plain
numeric use (read ``.data``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor, SingularMatrixError, as_tensor
from .panel import SupplyPanel


class DegenerateSolutionError(ArithmeticError):
    pass


@dataclass(frozen=True)
class BLHyper:
    delta: float = 0.6
    tau: float = 3.0
    kappa: int = 2
    epsilon: float = 1e-4
    mu: tuple[float, ...] | None = None  # None means all ones
    total_volume: float = 1.0

    def __post_init__(self):
        if not self.delta > 0 or not self.tau > 0 or not self.epsilon > 0:
            raise ValueError("delta, tau and epsilon must be positive")
        if int(self.kappa) != self.kappa or self.kappa < 1:
            raise ValueError(f"kappa must be a positive integer, got {self.kappa}")
        if self.mu is not None and min(self.mu) < 0:
            raise ValueError("mu must be non-negative")
        if not self.total_volume > 0:
            raise ValueError("total_volume must be positive")

    def mu_vector(self, n: int) -> np.ndarray:
        if self.mu is None:
            return np.ones(n)
        mu = np.asarray(self.mu, dtype=np.float64)
        if mu.shape != (n,):
            raise ValueError(f"mu has {mu.size} entries for {n} suppliers")
        return mu


@dataclass
class BLPosterior:
    mu_hat: Tensor
    sigma_hat: Tensor
    pi: Tensor
    q: Tensor


def equilibrium_profits(mu) -> np.ndarray:
    """Softmax of unit returns."""
    mu = np.asarray(mu, dtype=np.float64)
    e = np.exp(mu - mu.max())
    return e / e.sum()


def risk_matrix(panel: SupplyPanel, t: int, kappa: int = 2) -> np.ndarray:
    return np.diag((panel.orders[:, t] - panel.supplies[:, t]) ** kappa)


def _risk_diagonal(sigma) -> np.ndarray:
    sigma = np.asarray(sigma.data if isinstance(sigma, Tensor) else sigma, dtype=np.float64)
    if sigma.ndim == 2:
        if np.any(sigma - np.diag(np.diag(sigma))):
            raise ValueError("risk matrix must be diagonal")
        return np.diag(sigma).copy()
    return sigma


def bl_posterior(pi, sigma, P, omega, hyper: BLHyper, q=None, mu=None) -> BLPosterior:
    """View-adjusted profits and risk with regularisation calibration.

    ``sigma`` is the diagonal risk matrix (or its diagonal).  The view vector
    defaults to ``P @ mu``.
    """
    s = _risk_diagonal(sigma)
    n = s.size
    P, omega = as_tensor(P), as_tensor(omega)
    pi_t = as_tensor(np.asarray(pi.data if isinstance(pi, Tensor) else pi, dtype=np.float64))
    if P.shape != (n, n) or omega.shape != (n, n) or pi_t.shape != (n,):
        raise ag.ShapeError(
            f"bl_posterior: P {P.shape}, Omega {omega.shape}, Pi {pi_t.shape} for {n} suppliers"
        )
    tau, eps = hyper.tau, hyper.epsilon
    mu_vec = hyper.mu_vector(n) if mu is None else np.asarray(mu, dtype=np.float64)

    pi_col = ag.reshape(pi_t, (n, 1))
    # tau Sigma P^T, with Sigma diagonal
    tsp = ag.mul(ag.transpose(P), (tau * s)[:, None])
    J = ag.add(ag.matmul(P, tsp), omega)
    try:
        J_inv = ag.matrix_inverse(J)
    except SingularMatrixError as exc:
        raise SingularMatrixError(
            f"{exc}; P tau Sigma P^T + Omega is not invertible, inspect the Omega head"
        ) from None

    if q is None:
        q_col = ag.matmul(P, mu_vec[:, None])
    else:
        q_col = ag.reshape(as_tensor(q), (n, 1))
    gap = ag.sub(q_col, ag.matmul(P, pi_col))
    mu_hat = ag.add(pi_col, ag.matmul(tsp, ag.matmul(J_inv, gap)))

    reg = s + eps
    # tau (Sigma + eps I) P^T J^-1 P tau Sigma
    correction = ag.matmul(ag.mul(ag.transpose(P), (tau * reg)[:, None]), ag.matmul(J_inv, ag.transpose(tsp)))
    sigma_hat = ag.sub(np.diag((1.0 + tau) * reg), correction)
    return BLPosterior(ag.reshape(mu_hat, (n,)), sigma_hat, pi_t, ag.reshape(q_col, (n,)))


@dataclass
class BLSolution:
    raw: Tensor

    @property
    def normalized(self) -> np.ndarray:
        return normalize_allocation(self.raw.data)


def normalize_allocation(raw) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    total = raw.sum()
    if abs(total) < 1e-12:
        raise DegenerateSolutionError(f"allocation sums to {total:.3e}; cannot normalise")
    return raw / total


def bl_solve(post: BLPosterior, delta: float) -> BLSolution:
    """raw W* = (delta Sigma_hat)^-1 mu_hat."""
    n = post.mu_hat.shape[0]
    inv = ag.matrix_inverse(ag.mul(post.sigma_hat, delta))
    return BLSolution(ag.reshape(ag.matmul(inv, ag.reshape(post.mu_hat, (n, 1))), (n,)))


def predict_logits(history, w_out, b_out) -> Tensor:
    """Pre-softmax N x f scores: history @ W_out^T + b_out."""
    history, w_out, b_out = as_tensor(history), as_tensor(w_out), as_tensor(b_out)
    if w_out.shape[1] != history.shape[1]:
        raise ag.ShapeError(
            f"predict_future: W_out {w_out.shape} does not map {history.shape[1]} history steps"
        )
    return ag.add(ag.matmul(history, ag.transpose(w_out)), b_out)


def predict_future(history, w_out, b_out) -> Tensor:
    """Map N x (p+1) historical solutions to N x f simplex columns.

    ``w_out`` is (f, p+1); ``b_out`` is (N, f).  Softmax runs across suppliers
    independently for every future step.
    """
    return ag.softmax(predict_logits(history, w_out, b_out), axis=0)


def classic_bl(pi, sigma, P, Q, omega, hyper: BLHyper) -> np.ndarray:
    """Hand-authored-view Black-Litterman allocation, sum-normalised."""
    with ag.no_grad():
        post = bl_posterior(pi, sigma, P, omega, hyper, q=Q)
        return bl_solve(post, hyper.delta).normalized
