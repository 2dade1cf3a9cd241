"""Server side: aggregation, debiasing, gradient step and round orchestration."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from . import kernels
from .core import (ClientPayload, Dataset, ModelState, OrthonormalSet, ProtocolError,
                   ProtocolParams, RngStream, as_orthonormal, make_orthonormal_set)
from .modulation import ClientDraws, apply_draws, draw_client_randomness, privatize_clients
from .privacy import Accountant, PrivacyBudget

Payloads = Union[Sequence[ClientPayload], np.ndarray]


def _stack(payloads: Payloads):
    if isinstance(payloads, np.ndarray):
        return np.atleast_2d(payloads), None
    if len(payloads) == 0:
        raise ProtocolError("at least one payload is required")
    G = np.vstack([np.asarray(p.g_tilde, float) for p in payloads])
    y = np.array([p.y for p in payloads], dtype=float)
    return G, y


@dataclass(frozen=True)
class DebiasedMoments:
    sigma_g_tilde: np.ndarray
    sigma_x_hat: np.ndarray
    Z: np.ndarray
    G: Optional[np.ndarray] = None


def aggregate_second_moment(payloads: Payloads) -> np.ndarray:
    """(1/K) sum_i g_i g_i^T, exactly symmetric."""
    G, _ = _stack(payloads)
    return kernels.second_moment(np.ascontiguousarray(G[None]))[0]


def debias_covariance(sigma_g_tilde: np.ndarray, V, params: ProtocolParams,
                      sigma_dp: float) -> np.ndarray:
    """Remove the modulation and noise terms. The result may be indefinite."""
    V = as_orthonormal(V)
    d = sigma_g_tilde.shape[-1]
    if V.d != d:
        raise ProtocolError("V does not match the covariance dimension")
    corr = (params.lam**2 / (2.0 * V.m)) * V.projector + sigma_dp**2 * np.eye(d)
    return (sigma_g_tilde - corr) / (1.0 - params.alpha) ** 2


def debias_covariance_single(sigma_g_tilde: np.ndarray, v: np.ndarray, params: ProtocolParams,
                             sigma_dp: float) -> np.ndarray:
    d = sigma_g_tilde.shape[-1]
    v = np.asarray(v, float)
    corr = (params.lam**2 / 2.0) * np.outer(v, v) + sigma_dp**2 * np.eye(d)
    return (sigma_g_tilde - corr) / (1.0 - params.alpha) ** 2


def debias_cross_moment(payloads: Payloads, params: ProtocolParams, y=None) -> np.ndarray:
    """Z = (1/(1-a)) (1/K) sum_i y_i g_i."""
    G, yp = _stack(payloads)
    y = yp if y is None else np.asarray(y, float)
    if y is None:
        raise ProtocolError("responses are required with raw payload arrays")
    return kernels.cross_moment(np.ascontiguousarray(G[None]), np.ascontiguousarray(y))[0] / (1.0 - params.alpha)


def gradient_estimate(moments: DebiasedMoments, beta: np.ndarray) -> np.ndarray:
    return moments.sigma_x_hat @ np.asarray(beta, float) - moments.Z


def update_beta(beta: np.ndarray, G: np.ndarray, step: float, clip_radius: float) -> np.ndarray:
    """Gradient step followed by projection onto the ball of radius ``clip_radius``."""
    if not step > 0 or not clip_radius > 0:
        raise ProtocolError("step and clip radius must be positive")
    b = np.asarray(beta, float) - step * np.asarray(G, float)
    if math.isinf(clip_radius):
        return b
    return b / max(1.0, float(np.linalg.norm(b)) / clip_radius)


def operator_norm(S: np.ndarray) -> float:
    """Largest absolute eigenvalue of the symmetric part."""
    w = np.linalg.eigvalsh(0.5 * (S + S.T))
    return float(np.max(np.abs(w)))


def adaptive_step(sigma_x_hat: np.ndarray, c_factor: float) -> float:
    nrm = operator_norm(sigma_x_hat)
    if nrm < 1e-12:
        raise ProtocolError("debiased covariance is numerically zero; step undefined")
    return c_factor / nrm


def true_gradient(X: np.ndarray, Y: np.ndarray, beta: np.ndarray) -> np.ndarray:
    K = X.shape[0]
    return (X.T @ (X @ beta) - X.T @ Y) / K


def empirical_loss(X: np.ndarray, Y: np.ndarray, beta: np.ndarray) -> float:
    r = X @ beta - Y
    return float(r @ r) / (2.0 * X.shape[0])


# ---------------------------------------------------------------------------
# batched gradients for Monte-Carlo work
# ---------------------------------------------------------------------------


def gradient_batch(X: np.ndarray, Y: np.ndarray, beta: np.ndarray, V: OrthonormalSet,
                   params: ProtocolParams, sigma_dp: float, draws: ClientDraws) -> np.ndarray:
    """G for every replicate in ``draws`` without forming d x d matrices."""
    Gt = apply_draws(X, V, params, draws)
    beta = np.ascontiguousarray(beta, dtype=float)
    sb = kernels.beta_moment(Gt, beta)
    z = kernels.cross_moment(Gt, np.ascontiguousarray(Y, dtype=float))
    corr = (params.lam**2 / (2.0 * V.m)) * (V.projector @ beta) + sigma_dp**2 * beta
    oma = 1.0 - params.alpha
    return (sb - corr[None, :]) / oma**2 - z / oma


def covariance_batch(X: np.ndarray, V: OrthonormalSet, params: ProtocolParams, sigma_dp: float,
                     draws: ClientDraws) -> np.ndarray:
    Gt = apply_draws(X, V, params, draws)
    return debias_covariance(kernels.second_moment(Gt), V, params, sigma_dp)


# ---------------------------------------------------------------------------
# rounds
# ---------------------------------------------------------------------------


@dataclass
class RoundRecord:
    round_index: int
    beta_in: np.ndarray
    beta_out: np.ndarray
    V: np.ndarray
    sigma_x_hat: np.ndarray
    Z: np.ndarray
    G: np.ndarray
    step: float
    rho_spent: float
    rho_cumulative: float

    def summary(self) -> dict:
        h = hashlib.sha256(np.ascontiguousarray(self.beta_out).tobytes()).hexdigest()[:16]
        return {"round": self.round_index, "grad_norm": float(np.linalg.norm(self.G)),
                "step": self.step, "beta_norm": float(np.linalg.norm(self.beta_out)),
                "beta_sha256": h, "rho_round": self.rho_spent,
                "rho_cumulative": self.rho_cumulative}


def _choose_step(params: ProtocolParams, sigma_x_hat: np.ndarray, X: np.ndarray) -> float:
    rule = params.step
    if rule.kind == "fixed":
        return rule.value
    if rule.kind == "adaptive":
        return adaptive_step(sigma_x_hat, rule.value)
    lmax = float(np.linalg.eigvalsh(X.T @ X / X.shape[0])[-1])
    return rule.value / lmax


def round_moments(g_tilde: np.ndarray, y: np.ndarray, V: OrthonormalSet, params: ProtocolParams,
                  sigma_dp: float, beta: np.ndarray) -> DebiasedMoments:
    S = kernels.second_moment(np.ascontiguousarray(g_tilde[None]))[0]
    Sx = debias_covariance(S, V, params, sigma_dp)
    Z = kernels.cross_moment(np.ascontiguousarray(g_tilde[None]), np.ascontiguousarray(y))[0] / (1.0 - params.alpha)
    return DebiasedMoments(S, Sx, Z, Sx @ beta - Z)


def run_round(state: ModelState, clients: Dataset, params: ProtocolParams, sigma_dp: float,
              stream: RngStream, accountant: Optional[Accountant] = None,
              rho_round: Optional[float] = None):
    """Draw V orthogonal to beta, simulate all clients, debias and step."""
    t = state.round_index
    beta = np.asarray(state.beta, float)
    rs = stream.child("round", t)
    V = make_orthonormal_set(clients.d, params.m, orthogonal_to=beta, rng=rs.child("basis"))
    g_tilde, _ = privatize_clients(clients.X, V, params, sigma_dp, rs.child("clients"))
    mom = round_moments(g_tilde, clients.Y, V, params, sigma_dp, beta)
    step = _choose_step(params, mom.sigma_x_hat, clients.X)
    new_beta = update_beta(beta, mom.G, step, params.clip_radius)
    rho_cum = 0.0
    if accountant is not None:
        if rho_round is None:
            raise ProtocolError("an accountant needs the per-round rho")
        rho_cum = accountant.spend(rho_round)
    rec = RoundRecord(t, beta, new_beta, V.V, mom.sigma_x_hat, mom.Z, mom.G, step,
                      0.0 if rho_round is None else rho_round, rho_cum)
    return ModelState(new_beta, t + 1), rec


@dataclass
class ProtocolRun:
    beta: np.ndarray
    beta_avg: np.ndarray
    records: List[RoundRecord]
    accountant: Accountant
    iterates: List[np.ndarray] = field(default_factory=list)


def run_protocol(data: Dataset, params: ProtocolParams, budget: Optional[PrivacyBudget],
                 seed: int, sigma_dp: Optional[float] = None, stream: Optional[RngStream] = None,
                 beta0: Optional[np.ndarray] = None, keep_records: bool = True) -> ProtocolRun:
    """T rounds of the modulated protocol starting from ``beta0`` (zeros).

    Either a budget (which fixes sigma_dp and feeds the ledger) or an
    explicit ``sigma_dp`` for analysis runs must be supplied.
    """
    if budget is None and sigma_dp is None:
        raise ProtocolError("supply a privacy budget or an explicit sigma_dp")
    if budget is not None:
        if budget.rounds != params.rounds:
            raise ProtocolError("budget and protocol disagree on the number of rounds")
        sigma_dp = budget.sigma_dp
        acct = Accountant(budget.delta)
        rho_round = budget.rho_per_round
    else:
        acct, rho_round = Accountant(), None
    params.check_dim(data.d, orthogonal=True)
    stream = stream or RngStream(seed, ("protocol",))
    state = ModelState(np.zeros(data.d) if beta0 is None else np.asarray(beta0, float), 0)
    records, iterates = [], []
    total = np.zeros(data.d)
    for _ in range(params.rounds):
        state, rec = run_round(state, data, params, sigma_dp, stream,
                               acct if rho_round is not None else None, rho_round)
        total += state.beta
        iterates.append(state.beta)
        if keep_records:
            records.append(rec)
    if budget is not None:
        acct.check(budget.eps_total)
    return ProtocolRun(state.beta, total / params.rounds, records, acct, iterates)
