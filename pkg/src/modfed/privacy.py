"""Noise calibration, zCDP composition and conversion, feature norm control."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .core import Dataset, ProtocolError, ProtocolParams
from .modulation import lipschitz_constant

DEFAULT_DELTA = 1e-5


class AccountingError(RuntimeError):
    """A run spent more privacy than it declared."""


def _check_delta(delta: float) -> None:
    if not 0.0 < delta < 1.0:
        raise ProtocolError("delta must lie in (0, 1)")


def gaussian_sigma_for_eps_delta(L: float, eps: float, delta: float) -> float:
    """Classical Gaussian mechanism noise scale for (eps, delta)-DP."""
    if not (L > 0 and eps > 0):
        raise ProtocolError("L and eps must be positive")
    _check_delta(delta)
    return L * math.sqrt(2.0 * math.log(1.25 / delta)) / eps


def gaussian_sigma_for_zcdp(L: float, rho: float) -> float:
    if not (L > 0 and rho > 0):
        raise ProtocolError("L and rho must be positive")
    return L / math.sqrt(2.0 * rho)


def compose_zcdp(per_round_rhos: Sequence[float]) -> float:
    """Sequential composition. Clients within a round touch disjoint data, so
    parallel composition adds nothing there."""
    rhos = [float(r) for r in per_round_rhos]
    if any(r <= 0 for r in rhos):
        raise ProtocolError("per-round rho values must be positive")
    return math.fsum(rhos)


def zcdp_to_eps(rho: float, delta: float) -> float:
    if rho < 0:
        raise ProtocolError("rho must be non-negative")
    _check_delta(delta)
    return rho + 2.0 * math.sqrt(rho * math.log(1.0 / delta))


def eps_to_zcdp(eps_total: float, delta: float) -> float:
    """Largest rho whose (eps, delta) conversion equals ``eps_total``.

    With s = sqrt(rho) and a = ln(1/delta): s^2 + 2 s sqrt(a) - eps = 0.
    """
    if not eps_total > 0:
        raise ProtocolError("eps must be positive")
    _check_delta(delta)
    a = math.log(1.0 / delta)
    # rationalized root: s = eps / (sqrt(a + eps) + sqrt(a)) avoids cancellation
    s = eps_total / (math.sqrt(a + eps_total) + math.sqrt(a))
    if not s > 0:
        raise AccountingError("no positive zCDP root for the requested epsilon")
    return s * s


def eps_budget_to_per_round_rho(eps_total: float, delta: float, T: int,
                                L: Optional[float] = None):
    """Uniform split of an (eps, delta) budget over ``T`` rounds.

    Returns ``(rho_total, rho_per_round, sigma_dp)``; ``sigma_dp`` is None
    when no sensitivity ``L`` is given.
    """
    if int(T) != T or T < 1:
        raise ProtocolError("T must be an integer >= 1")
    rho = eps_to_zcdp(eps_total, delta)
    rho_t = rho / T
    sigma = None if L is None else gaussian_sigma_for_zcdp(L, rho_t)
    return rho, rho_t, sigma


def tradeoff_curve(eps: float, delta: float, alpha_type1):
    """Type II error lower bound f_{eps,delta}(alpha) of an (eps, delta)-DP test."""
    a = np.asarray(alpha_type1, dtype=float)
    if np.any((a < 0) | (a > 1)):
        raise ProtocolError("type I error must lie in [0, 1]")
    if eps < 0 or not 0.0 <= delta <= 1.0:
        raise ProtocolError("need eps >= 0 and delta in [0, 1]")
    out = np.maximum.reduce([np.zeros_like(a), 1.0 - delta - math.exp(eps) * a,
                             math.exp(-eps) * (1.0 - delta - a)])
    return float(out) if out.ndim == 0 else out


def dpsgd_sensitivity(clip_C: float) -> float:
    """Replacing one client's clipped gradient moves it by at most 2C."""
    if not clip_C > 0:
        raise ProtocolError("clip norm must be positive")
    return 2.0 * clip_C


def clip_features(data: Dataset, mode: str = "global", reference: Optional[Dataset] = None) -> Dataset:
    """Bound every feature row to unit l2 norm.

    ``global`` divides the whole matrix by the largest row norm of
    ``reference`` (default: ``data`` itself) and records the factor in
    ``row_scale``; rows of other splits may then still exceed 1 and are
    additionally projected. ``row`` projects each row onto the unit ball.
    """
    X = data.X
    if mode == "global":
        ref = data if reference is None else reference
        factor = ref.row_scale if reference is not None and ref.row_scale != 1.0 else \
            max(1.0, float(np.max(np.linalg.norm(ref.X, axis=1))))
        X = X / factor
        X = _project_rows(X)
        return replace(data, X=X, row_scale=data.row_scale * factor)
    if mode == "row":
        return replace(data, X=_project_rows(X))
    raise ProtocolError(f"unknown clipping mode {mode!r}")


def _project_rows(X: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(X, axis=1)
    return X / np.maximum(1.0, n)[:, None]


@dataclass
class PrivacyBudget:
    """Declared budget of a run and the derived per-round noise.

    ``mode`` is ``"zcdp"`` (per-round rho from a split of eps_total, the
    default for experiments) or ``"eps_delta"`` (each round calibrated by the
    classical Gaussian mechanism at (eps_round, delta)).
    """

    eps_total: float
    delta: float
    rounds: int
    sensitivity: float
    mode: str = "zcdp"
    rho_total: float = field(init=False)
    rho_per_round: float = field(init=False)
    sigma_dp: float = field(init=False)

    def __post_init__(self):
        if self.mode == "zcdp":
            self.rho_total, self.rho_per_round, self.sigma_dp = eps_budget_to_per_round_rho(
                self.eps_total, self.delta, self.rounds, self.sensitivity)
        elif self.mode == "eps_delta":
            if self.rounds != 1:
                raise ProtocolError("eps_delta calibration is single-release; use zcdp for T > 1")
            self.sigma_dp = gaussian_sigma_for_eps_delta(self.sensitivity, self.eps_total, self.delta)
            # the classical mechanism is also rho-zCDP with rho = L^2 / (2 sigma^2)
            self.rho_per_round = self.sensitivity**2 / (2.0 * self.sigma_dp**2)
            self.rho_total = self.rho_per_round
        else:
            raise ProtocolError(f"unknown budget mode {self.mode!r}")

    @classmethod
    def for_protocol(cls, eps_total: float, params: ProtocolParams, rounds: Optional[int] = None,
                     delta: float = DEFAULT_DELTA, mode: str = "zcdp") -> "PrivacyBudget":
        return cls(eps_total, delta, params.rounds if rounds is None else rounds,
                   lipschitz_constant(params), mode)

    @classmethod
    def for_dpsgd(cls, eps_total: float, clip_C: float, rounds: int,
                  delta: float = DEFAULT_DELTA) -> "PrivacyBudget":
        return cls(eps_total, delta, rounds, dpsgd_sensitivity(clip_C))


@dataclass
class Accountant:
    """Per-run ledger of zCDP spends."""

    delta: float = DEFAULT_DELTA
    entries: List[float] = field(default_factory=list)

    def spend(self, rho: float) -> float:
        if not rho > 0:
            raise ProtocolError("a release must spend positive rho")
        self.entries.append(float(rho))
        return self.rho

    @property
    def rho(self) -> float:
        return compose_zcdp(self.entries) if self.entries else 0.0

    @property
    def eps(self) -> float:
        return zcdp_to_eps(self.rho, self.delta)

    def check(self, declared_eps: float, tol: float = 1e-9) -> None:
        if self.eps > declared_eps + tol:
            raise AccountingError(f"ledger epsilon {self.eps!r} exceeds declared {declared_eps!r}")

    def to_record(self) -> dict:
        cum = np.cumsum(self.entries).tolist() if self.entries else []
        return {"rho_per_round": list(self.entries), "rho_cumulative": cum,
                "rho_total": self.rho, "delta": self.delta, "eps": self.eps}
