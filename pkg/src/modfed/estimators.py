"""One-shot moment estimator, OLS reference and the DP-SGD FedAvg baseline."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from . import kernels
from .core import Dataset, ProtocolError, ProtocolParams, RngStream, as_orthonormal, make_orthonormal_set
from .modulation import privatize_clients
from .privacy import Accountant, PrivacyBudget
from .server import Payloads, _stack, debias_covariance

log = logging.getLogger(__name__)

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class OneShotResult:
    gamma_hat: np.ndarray
    sigma_x_hat: np.ndarray
    beta_hat: np.ndarray
    ridge_gamma: float
    used_lstsq: bool = False


def one_shot_estimate(payloads: Payloads, V, params: ProtocolParams, sigma_dp: float,
                      ridge_gamma: float = 0.0, y=None) -> OneShotResult:
    """Solve (Sigma_x_hat + gamma I) beta = Gamma_hat from a single release."""
    if ridge_gamma < 0:
        raise ProtocolError("ridge_gamma must be non-negative")
    H, yp = _stack(payloads)
    y = yp if y is None else np.asarray(y, float)
    K, d = H.shape
    if K < d:
        log.warning("one-shot estimate with K=%d < d=%d clients is poorly determined", K, d)
    H3 = np.ascontiguousarray(H[None])
    gamma_hat = kernels.cross_moment(H3, np.ascontiguousarray(y))[0] / (1.0 - params.alpha)
    Sx = debias_covariance(kernels.second_moment(H3)[0], as_orthonormal(V), params, sigma_dp)
    A = Sx + ridge_gamma * np.eye(d)
    if ridge_gamma == 0.0 and np.linalg.cond(A) > _COND_LIMIT:
        raise ProtocolError("debiased covariance is singular or ill-conditioned; use ridge_gamma > 0")
    used_lstsq = False
    try:
        beta = scipy.linalg.solve(A, gamma_hat, assume_a="sym")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        beta = np.linalg.lstsq(A, gamma_hat, rcond=None)[0]
        used_lstsq = True
    return OneShotResult(gamma_hat, Sx, beta, float(ridge_gamma), used_lstsq)


def run_one_shot(data: Dataset, params: ProtocolParams, budget: PrivacyBudget, ridge_gamma: float,
                 seed: int, stream: Optional[RngStream] = None):
    """Single private release followed by the one-shot solve.

    Returns ``(OneShotResult, Accountant)``; the ledger holds exactly one entry.
    """
    if budget.rounds != 1:
        raise ProtocolError("the one-shot estimator spends a single release (rounds=1)")
    stream = stream or RngStream(seed, ("oneshot",))
    V = make_orthonormal_set(data.d, params.m, orthogonal_to=None, rng=stream.child("basis"))
    H, _ = privatize_clients(data.X, V, params, budget.sigma_dp, stream.child("clients"))
    acct = Accountant(budget.delta)
    acct.spend(budget.rho_per_round)
    acct.check(budget.eps_total)
    return one_shot_estimate(H, V, params, budget.sigma_dp, ridge_gamma, y=data.Y), acct


def ols(data: Dataset) -> np.ndarray:
    """Least-squares coefficients via an SVD-based solver."""
    beta, _, rank, sv = np.linalg.lstsq(data.X, data.Y, rcond=None)
    if rank < data.d:
        raise ProtocolError(f"design matrix has rank {rank} < d={data.d}")
    return beta


def dpsgd_fedavg_round(beta: np.ndarray, clients: Dataset, clip_C: float, lr: float,
                       sigma_dp: float, stream: RngStream) -> np.ndarray:
    """One FedAvg round: each client sends its clipped, noised squared-loss gradient."""
    if not clip_C > 0 or not lr > 0:
        raise ProtocolError("clip norm and learning rate must be positive")
    X, Y = clients.X, clients.Y
    r = X @ beta - Y
    grads = r[:, None] * X
    norms = np.linalg.norm(grads, axis=1)
    if np.isfinite(clip_C):
        grads = grads * np.minimum(1.0, clip_C / np.maximum(norms, 1e-300))[:, None]
    if sigma_dp > 0:
        grads = grads + sigma_dp * stream.child("noise").generator().standard_normal(grads.shape)
    return beta - lr * grads.mean(axis=0)


def run_dpsgd(data: Dataset, clip_C: float, lr: float, budget: PrivacyBudget, seed: int,
              stream: Optional[RngStream] = None):
    """T rounds of DP-SGD FedAvg from zero; returns ``(beta, Accountant)``."""
    stream = stream or RngStream(seed, ("dpsgd",))
    acct = Accountant(budget.delta)
    beta = np.zeros(data.d)
    for t in range(budget.rounds):
        beta = dpsgd_fedavg_round(beta, data, clip_C, lr, budget.sigma_dp, stream.child("round", t))
        acct.spend(budget.rho_per_round)
    acct.check(budget.eps_total)
    return beta, acct


def r_squared(beta: np.ndarray, test: Dataset) -> float:
    if test.K < 2:
        raise ProtocolError("R^2 needs at least two test rows")
    resid = test.Y - test.X @ beta
    dev = test.Y - test.Y.mean()
    ss_tot = float(dev @ dev)
    if ss_tot == 0:
        raise ProtocolError("test response is constant")
    return 1.0 - float(resid @ resid) / ss_tot
