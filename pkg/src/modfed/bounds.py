"""Closed-form variance, convergence and reconstruction bounds with Monte-Carlo checks.

Each ``validate_*`` function simulates the protocol and compares sample
means with the matching closed form, returning :class:`Check` records.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence

import numpy as np

from .core import (OrthonormalSet, ProtocolError, ProtocolParams, RngStream, StepRule,
                   make_orthonormal_set)
from .modulation import TWO_PI, apply_draws, draw_client_randomness, modulate_single
from .server import covariance_batch, empirical_loss, gradient_batch, run_protocol, true_gradient

DEFAULT_CHUNK = 256


# ---------------------------------------------------------------------------
# variance and convergence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VarianceInputs:
    S_r_sq: float
    beta_sigma_rx: float
    tr_sigma_x: float
    K: int
    d: int
    alpha: float
    lam: float
    sigma_dp: float
    beta_norm_sq: float

    def __post_init__(self):
        if self.S_r_sq < 0 or self.tr_sigma_x < 0:
            raise ProtocolError("S_r^2 and tr(Sigma_x) are non-negative")

    @classmethod
    def from_data(cls, X, Y, beta, params: ProtocolParams, sigma_dp: float) -> "VarianceInputs":
        X = np.asarray(X, float)
        beta = np.asarray(beta, float)
        K, d = X.shape
        r = X @ beta - np.asarray(Y, float)
        return cls(float(r @ r) / K, float(beta @ (X.T @ r)) / K, float(np.sum(X * X)) / K,
                   K, d, params.alpha, params.lam, sigma_dp, float(beta @ beta))


def gradient_variance(v: VarianceInputs) -> float:
    """E||G - grad L||^2 of the single-vector protocol with v orthogonal to beta."""
    s2, s4 = v.sigma_dp**2, v.sigma_dp**4
    oma = 1.0 - v.alpha
    first = (v.S_r_sq * (v.lam**2 / 2.0 + v.d * s2) + 2.0 * s2 * v.beta_sigma_rx
             + s2 * v.beta_norm_sq * v.tr_sigma_x) / (v.K * oma**2)
    second = v.beta_norm_sq * (v.lam**2 * s2 / 2.0 + (v.d + 1) * s4) / (v.K * oma**4)
    return first + second


@dataclass(frozen=True)
class BoundConstants:
    B: float  # bound on ||beta_t||
    R: float  # bound on ||x_i||
    M: float  # bound on |y_i|

    def __post_init__(self):
        if not (self.B > 0 and self.R > 0 and self.M > 0):
            raise ProtocolError("B, R and M must be positive")


def uniform_variance_bound(c: BoundConstants, params: ProtocolParams, sigma_dp: float,
                           K: int, d: int) -> float:
    s2, s4 = sigma_dp**2, sigma_dp**4
    oma = 1.0 - params.alpha
    rb_m = c.R * c.B + c.M
    first = (rb_m**2 * (params.lam**2 / 2.0 + d * s2) + 2.0 * s2 * c.B * c.R * rb_m
             + s2 * c.B**2 * c.R**2) / (K * oma**2)
    second = c.B**2 * (params.lam**2 * s2 / 2.0 + (d + 1) * s4) / (K * oma**4)
    return first + second


def convergence_bound(L_dp: float, beta0_dist_sq: float, T: int, sigma_bar_sq: float, K: int) -> float:
    """Optimization term L||b0 - b*||^2 / (2T) plus the noise floor sigma^2 / (2 L K)."""
    if not L_dp > 0 or T < 1:
        raise ProtocolError("need L_dp > 0 and T >= 1")
    return L_dp * beta0_dist_sq / (2.0 * T) + sigma_bar_sq / (2.0 * L_dp * K)


# ---------------------------------------------------------------------------
# reconstruction lower bounds
# ---------------------------------------------------------------------------


def _theta(x, v, phi, params) -> float:
    return params.omega * float(np.asarray(x, float) @ np.asarray(v, float)) + phi


def c1_coefficient(theta, params: ProtocolParams):
    """Rank-one coefficient of J^T J for the single-vector map."""
    s = np.sin(theta)
    lw = params.lam * params.omega
    return -2.0 * lw * (1.0 - params.alpha) * s + lw**2 * s**2


def jacobian(x, v, phi, params: ProtocolParams) -> np.ndarray:
    v = np.asarray(v, float)
    th = _theta(x, v, phi, params)
    return (1.0 - params.alpha) * np.eye(v.size) - params.lam * params.omega * math.sin(th) * np.outer(v, v)


def fisher_information(x, params: ProtocolParams, sigma_dp: float, phi: float, beta_star,
                       sigma_y: float, v) -> np.ndarray:
    """Fisher information about x carried by the pair (g_tilde, y) at a fixed phase."""
    if not sigma_dp > 0 or not sigma_y > 0:
        raise ProtocolError("sigma_dp and sigma_y must be positive")
    v = np.asarray(v, float)
    b = np.asarray(beta_star, float)
    c1 = c1_coefficient(_theta(x, v, phi, params), params)
    d = v.size
    return ((1.0 - params.alpha) ** 2 * np.eye(d) + c1 * np.outer(v, v)) / sigma_dp**2 \
        + np.outer(b, b) / sigma_y**2


def _crb(denominator: float) -> float:
    if not denominator > 0:
        raise ProtocolError("Fisher information is degenerate (non-positive trace)")
    return 1.0 / denominator


def crb_conditional(x, phi: float, params: ProtocolParams, sigma_dp: float, beta_star,
                    sigma_y: float, v) -> float:
    """Per-coordinate MSE floor of any unbiased attacker at a fixed phase."""
    b = np.asarray(beta_star, float)
    d = b.size
    c1 = float(c1_coefficient(_theta(x, v, phi, params), params))
    den = ((1.0 - params.alpha) ** 2 + c1 / d) / sigma_dp**2 + float(b @ b) / (d * sigma_y**2)
    return _crb(den)


def crb_phase_averaged(params: ProtocolParams, sigma_dp: float, beta_star, sigma_y: float,
                       d: Optional[int] = None) -> float:
    b = np.asarray(beta_star, float)
    d = b.size if d is None else d
    den = ((1.0 - params.alpha) ** 2 / sigma_dp**2
           + (params.lam * params.omega) ** 2 / (2.0 * d * sigma_dp**2)
           + float(b @ b) / (d * sigma_y**2))
    return _crb(den)


# ---------------------------------------------------------------------------
# centering identity
# ---------------------------------------------------------------------------


def centering_terms(X, Y, beta, v, params: ProtocolParams, sigma_dp: float, phases, noise):
    """T1, T2, T3 for each replicate; ``phases`` (R, K), ``noise`` (R, K, d)."""
    X = np.asarray(X, float)
    beta = np.asarray(beta, float)
    v = np.asarray(v, float)
    K = X.shape[0]
    r = X @ beta - np.asarray(Y, float)
    C = np.cos(params.omega * (X @ v)[None, :] + phases)
    q = noise @ beta
    lam = params.lam
    T1 = lam * (C @ r)[:, None] * v[None, :] + np.einsum("rkd,k->rd", noise, r)
    T2 = q @ X
    T3 = lam * np.einsum("rk,rk->r", C, q)[:, None] * v[None, :] + np.einsum("rkd,rk->rd", noise, q) \
        - K * sigma_dp**2 * beta[None, :]
    return T1, T2, T3


def centered_gradient(T1, T2, T3, K: int, alpha: float):
    oma = 1.0 - alpha
    return (T1 + T2) / (K * oma) + T3 / (K * oma**2)


# ---------------------------------------------------------------------------
# Monte-Carlo machinery
# ---------------------------------------------------------------------------


@dataclass
class Check:
    name: str
    closed_form: float
    estimate: float
    se: float
    tolerance: str
    passed: bool

    def to_record(self) -> dict:
        return asdict(self)


def _compare(name: str, closed, est, se, n_se: float) -> List[Check]:
    closed, est, se = (np.atleast_1d(np.asarray(a, float)).ravel() for a in (closed, est, se))
    out = []
    for k, (c, e, s) in enumerate(zip(closed, est, se)):
        label = name if closed.size == 1 else f"{name}[{k}]"
        ok = abs(e - c) <= n_se * s + 1e-12 * max(1.0, abs(c))
        out.append(Check(label, float(c), float(e), float(s), f"{n_se:g} SE", bool(ok)))
    return out


class Moments:
    """Running first and second moments of sampled arrays."""

    def __init__(self):
        self.n = 0
        self.s1 = None
        self.s2 = None

    def add(self, batch: np.ndarray) -> None:
        batch = np.asarray(batch, float)
        s1, s2 = batch.sum(axis=0), (batch * batch).sum(axis=0)
        if self.s1 is None:
            self.s1, self.s2 = s1, s2
        else:
            self.s1 = self.s1 + s1
            self.s2 = self.s2 + s2
        self.n += batch.shape[0]

    @property
    def mean(self):
        return self.s1 / self.n

    @property
    def se(self):
        var = np.maximum(self.s2 / self.n - self.mean**2, 0.0) * self.n / max(self.n - 1, 1)
        return np.sqrt(var / self.n)


def chunks(N: int, chunk: int = DEFAULT_CHUNK) -> Iterator[tuple]:
    i = 0
    while i * chunk < N:
        yield i, min(chunk, N - i * chunk)
        i += 1


@dataclass(frozen=True)
class Instance:
    """Fixed data, model and modulation direction for a validator."""

    X: np.ndarray
    Y: np.ndarray
    beta: np.ndarray
    V: OrthonormalSet
    params: ProtocolParams
    sigma_dp: float

    @property
    def K(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def random_instance(K: int, d: int, seed: int, m: int = 1, sigma_dp: Optional[float] = None,
                    params: Optional[ProtocolParams] = None) -> Instance:
    """Random bounded data with v orthogonal to a nonzero beta."""
    g = RngStream(seed, ("instance", K, d)).generator()
    X = g.standard_normal((K, d))
    X /= np.maximum(1.0, np.linalg.norm(X, axis=1))[:, None]
    beta_true = g.standard_normal(d)
    Y = X @ beta_true + 0.3 * g.standard_normal(K)
    beta = g.standard_normal(d)
    if params is None:
        params = ProtocolParams(alpha=float(g.uniform(0.2, 0.7)), lam=float(g.uniform(0.1, 1.0)),
                                omega=float(g.uniform(0.5, 2.0)), m=m)
    if sigma_dp is None:
        sigma_dp = float(g.uniform(0.2, 1.0))
    V = make_orthonormal_set(d, params.m, orthogonal_to=beta, rng=RngStream(seed, ("instance-basis",)))
    return Instance(X, Y, beta, V, params, sigma_dp)


def _draws(inst: Instance, stream: RngStream, R: int):
    return draw_client_randomness(stream, inst.K, inst.d, inst.V.m, inst.sigma_dp, replicates=R)


# ---------------------------------------------------------------------------
# validators
# ---------------------------------------------------------------------------


def validate_unbiasedness(inst: Instance, N: int, seed: int, n_se: float = 4.0) -> List[Check]:
    acc = Moments()
    base = RngStream(seed, ("unbiased",))
    for i, R in chunks(N):
        acc.add(gradient_batch(inst.X, inst.Y, inst.beta, inst.V, inst.params, inst.sigma_dp,
                               _draws(inst, base.child(i), R)))
    return _compare("unbiasedness", true_gradient(inst.X, inst.Y, inst.beta), acc.mean, acc.se, n_se)


def validate_covariance(inst: Instance, N: int, seed: int, n_se: float = 4.0) -> List[Check]:
    acc = Moments()
    base = RngStream(seed, ("covariance",))
    for i, R in chunks(N):
        acc.add(covariance_batch(inst.X, inst.V, inst.params, inst.sigma_dp,
                                 _draws(inst, base.child(i), R)))
    target = inst.X.T @ inst.X / inst.K
    iu = np.triu_indices(inst.d)
    return _compare("covariance_debias", target[iu], acc.mean[iu], acc.se[iu], n_se)


def validate_second_moment(x, V, params: ProtocolParams, sigma_dp: float, N: int, seed: int,
                           n_se: float = 4.0) -> List[Check]:
    """Entrywise E[g g^T | x] against (1-a)^2 x x^T + lam^2/(2m) P_V + sigma^2 I."""
    from .core import as_orthonormal
    V = as_orthonormal(V)
    x = np.asarray(x, float)
    X = x[None, :]
    acc = Moments()
    base = RngStream(seed, ("second-moment",))
    for i, R in chunks(N, 4096):
        draws = draw_client_randomness(base.child(i), 1, x.size, V.m, sigma_dp, replicates=R)
        g = apply_draws(X, V, params, draws)[:, 0, :]
        acc.add(np.einsum("ra,rb->rab", g, g))
    d = x.size
    target = (1.0 - params.alpha) ** 2 * np.outer(x, x) + params.lam**2 / (2.0 * V.m) * V.projector \
        + sigma_dp**2 * np.eye(d)
    iu = np.triu_indices(d)
    return _compare("second_moment", target[iu], acc.mean[iu], acc.se[iu], n_se)


def validate_centering(inst: Instance, N: int, seed: int, tol: float = 1e-10) -> List[Check]:
    """Per-draw identity G - grad L = (T1+T2)/(K(1-a)) + T3/(K(1-a)^2)."""
    if inst.V.m != 1:
        raise ProtocolError("the centering identity is stated for a single modulation vector")
    v = inst.V.column(0)
    worst, scale = 0.0, 0.0
    base = RngStream(seed, ("centering",))
    grad = true_gradient(inst.X, inst.Y, inst.beta)
    for i, R in chunks(N):
        dr = _draws(inst, base.child(i), R)
        G = gradient_batch(inst.X, inst.Y, inst.beta, inst.V, inst.params, inst.sigma_dp, dr)
        T1, T2, T3 = centering_terms(inst.X, inst.Y, inst.beta, v, inst.params, inst.sigma_dp,
                                     dr.phases[..., 0], dr.noise)
        rhs = centered_gradient(T1, T2, T3, inst.K, inst.params.alpha)
        worst = max(worst, float(np.max(np.abs(G - grad - rhs))))
        scale = max(scale, float(np.max(np.abs(G))))
    # absolute error relative to the magnitude of G itself
    rel = worst / max(1.0, scale)
    return [Check("centering_identity", 0.0, rel, 0.0, f"abs {tol:g}", rel <= tol)]


def _block_samples(inst: Instance, stream: RngStream, R: int):
    v = inst.V.column(0)
    dr = _draws(inst, stream, R)
    T1, T2, T3 = centering_terms(inst.X, inst.Y, inst.beta, v, inst.params, inst.sigma_dp,
                                 dr.phases[..., 0], dr.noise)
    T12 = T1 + T2
    return np.column_stack([np.sum(T12 * T12, axis=1), np.sum(T3 * T3, axis=1),
                            np.sum(T12 * T3, axis=1), np.sum(T1 * T3, axis=1),
                            np.sum(T2 * T3, axis=1)])


def block_closed_forms(inst: Instance) -> np.ndarray:
    K, d = inst.K, inst.d
    lam, s2 = inst.params.lam, inst.sigma_dp**2
    vi = VarianceInputs.from_data(inst.X, inst.Y, inst.beta, inst.params, inst.sigma_dp)
    r_sq = vi.S_r_sq * K
    b12 = r_sq * (lam**2 / 2.0 + d * s2) + 2.0 * K * s2 * vi.beta_sigma_rx \
        + K * s2 * vi.beta_norm_sq * vi.tr_sigma_x
    b3 = K * vi.beta_norm_sq * (lam**2 * s2 / 2.0 + (d + 1) * s2**2)
    return np.array([b12, b3, 0.0, 0.0, 0.0])


def validate_block_norms(inst: Instance, N: int, seed: int, n_se: float = 5.0) -> List[Check]:
    acc = Moments()
    base = RngStream(seed, ("blocks",))
    for i, R in chunks(N):
        acc.add(_block_samples(inst, base.child(i), R))
    names = ["E|T1+T2|^2", "E|T3|^2", "E(T1+T2)T3", "E T1T3", "E T2T3"]
    closed = block_closed_forms(inst)
    out = []
    for k, nm in enumerate(names):
        out += _compare(nm, closed[k], acc.mean[k], acc.se[k], n_se)
    return out


def validate_variance(inst: Instance, N: int, seed: int, n_se: float = 5.0) -> List[Check]:
    """MC mean of ||G - grad L||^2 against the closed-form variance."""
    if inst.V.m != 1:
        raise ProtocolError("the variance formula covers the single-vector protocol")
    acc = Moments()
    base = RngStream(seed, ("variance",))
    grad = true_gradient(inst.X, inst.Y, inst.beta)
    for i, R in chunks(N):
        G = gradient_batch(inst.X, inst.Y, inst.beta, inst.V, inst.params, inst.sigma_dp,
                           _draws(inst, base.child(i), R))
        diff = G - grad
        acc.add(np.sum(diff * diff, axis=1)[:, None])
    closed = gradient_variance(VarianceInputs.from_data(inst.X, inst.Y, inst.beta, inst.params,
                                                        inst.sigma_dp))
    return _compare("gradient_variance", closed, acc.mean, acc.se, n_se)


def validate_scalar_moments(sigma_dp: float, beta, d: int, N: int, seed: int,
                            n_se: float = 4.0) -> List[Check]:
    """The five scalar moment identities of phases and Gaussian noise."""
    beta = np.asarray(beta, float)
    if beta.size != d:
        raise ProtocolError("beta must have length d")
    g = RngStream(seed, ("scalar-moments",)).generator()
    a = g.standard_normal(d)
    offs = g.uniform(0, TWO_PI, size=2)
    acc = Moments()
    for i, R in chunks(N, 8192):
        gi = RngStream(seed, ("scalar-moments", i)).generator()
        ph = gi.uniform(0.0, TWO_PI, size=(R, 2))
        C = np.cos(offs[None, :] + ph)
        xi = sigma_dp * gi.standard_normal((R, 2, d))
        q = xi @ beta
        n2 = np.sum(xi[:, 0] ** 2, axis=1)
        acc.add(np.column_stack([C[:, 0], C[:, 0] ** 2, C[:, 0] * C[:, 1],
                                 q[:, 0], q[:, 0] ** 2, q[:, 0] * q[:, 1],
                                 q[:, 0] * (xi[:, 0] @ a),
                                 q[:, 0] * n2, q[:, 0] ** 2 * n2]))
    b2 = float(beta @ beta)
    s2 = sigma_dp**2
    closed = [0.0, 0.5, 0.0, 0.0, s2 * b2, 0.0, s2 * float(beta @ a), 0.0, s2**2 * (d + 2) * b2]
    names = ["E C_i", "E C_i^2", "E C_iC_j", "E q_i", "E q_i^2", "E q_iq_j", "E q_i xi_i.a",
             "E q_i|xi_i|^2", "E q_i^2|xi_i|^2"]
    out = []
    for k, nm in enumerate(names):
        out += _compare(nm, closed[k], acc.mean[k], acc.se[k], n_se)
    return out


def validate_expected_expansion(x, x_prime, v, params: ProtocolParams, N: int, seed: int,
                                n_se: float = 4.0) -> List[Check]:
    from .modulation import expected_pair_distance_sq
    x = np.asarray(x, float)
    xp = np.asarray(x_prime, float)
    acc = Moments()
    for i, R in chunks(N, 16384):
        phi = RngStream(seed, ("expansion", i)).generator().uniform(0.0, TWO_PI, size=R)
        diff = modulate_single(np.repeat(x[None], R, 0), v, phi, params) \
            - modulate_single(np.repeat(xp[None], R, 0), v, phi, params)
        acc.add(np.sum(diff * diff, axis=1)[:, None])
    return _compare("expected_expansion", expected_pair_distance_sq(x, xp, v, params),
                    acc.mean, acc.se, n_se)


def validate_c1_average(params: ProtocolParams, x, v, N: int, seed: int, n_se: float = 4.0) -> List[Check]:
    phi = RngStream(seed, ("c1",)).generator().uniform(0.0, TWO_PI, size=N)
    c1 = c1_coefficient(_theta(x, v, 0.0, params) + phi, params)
    acc = Moments()
    acc.add(c1[:, None])
    return _compare("E_phi c1", (params.lam * params.omega) ** 2 / 2.0, acc.mean, acc.se, n_se)


# ---------------------------------------------------------------------------
# convergence experiment
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceOutcome:
    excess_risk: float
    excess_se: float
    bound: float
    sigma_bar_sq: float
    L_dp: float

    @property
    def within_bound(self) -> bool:
        return self.excess_risk <= self.bound


def convergence_experiment(X, Y, params: ProtocolParams, sigma_dp: float, T: int, runs: int,
                           seed: int) -> ConvergenceOutcome:
    """Excess empirical risk of the averaged iterate versus the convergence bound.

    Uses eta = 1 / lambda_max(Sigma_x); ``params.clip_radius`` must contain
    the least-squares solution so that it is the constrained minimizer.
    """
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    K, d = X.shape
    beta_star = np.linalg.lstsq(X, Y, rcond=None)[0]
    if np.linalg.norm(beta_star) > params.clip_radius:
        raise ProtocolError("least-squares solution lies outside the clip ball")
    L_dp = float(np.linalg.eigvalsh(X.T @ X / K)[-1])
    p = ProtocolParams(params.alpha, params.lam, params.omega, params.m, params.clip_radius,
                       StepRule("lipschitz", 1.0), T)
    from .core import Dataset
    data = Dataset(X, Y)
    f_star = empirical_loss(X, Y, beta_star)
    excess = np.empty(runs)
    for k in range(runs):
        run = run_protocol(data, p, None, seed, sigma_dp=sigma_dp,
                           stream=RngStream(seed, ("convergence", k)), keep_records=False)
        excess[k] = empirical_loss(X, Y, run.beta_avg) - f_star
    consts = BoundConstants(B=params.clip_radius, R=float(np.max(np.linalg.norm(X, axis=1))),
                            M=float(np.max(np.abs(Y))))
    sbar = uniform_variance_bound(consts, params, sigma_dp, K, d)
    bound = convergence_bound(L_dp, float(beta_star @ beta_star), T, sbar, K)
    se = float(excess.std(ddof=1) / math.sqrt(runs)) if runs > 1 else float("nan")
    return ConvergenceOutcome(float(excess.mean()), se, bound, sbar, L_dp)


# ---------------------------------------------------------------------------
# suite
# ---------------------------------------------------------------------------


def _suite(N: int, seed: int) -> Dict[str, Callable[[], List[Check]]]:
    inst = random_instance(K=200, d=6, seed=seed)
    multi = random_instance(K=200, d=6, seed=seed + 1, m=3)
    g = RngStream(seed, ("suite",)).generator()
    x, xp = g.standard_normal(6), g.standard_normal(6)
    x /= np.linalg.norm(x)
    xp /= np.linalg.norm(xp)
    v = inst.V.column(0)
    return {
        "unbiasedness": lambda: validate_unbiasedness(inst, N, seed),
        "covariance": lambda: validate_covariance(inst, N, seed),
        "second_moment": lambda: validate_second_moment(x, multi.V, multi.params, multi.sigma_dp, N, seed),
        "centering": lambda: validate_centering(inst, min(N, 2000), seed),
        "block_norms": lambda: validate_block_norms(inst, N, seed),
        "variance": lambda: validate_variance(inst, N, seed),
        "scalar_moments": lambda: validate_scalar_moments(inst.sigma_dp, inst.beta, inst.d, N, seed),
        "expected_expansion": lambda: validate_expected_expansion(x, xp, v, inst.params, N, seed),
        "c1_average": lambda: validate_c1_average(inst.params, x, v, N, seed),
    }


VALIDATORS = tuple(_suite(1, 0).keys())


def run_validators(N: int = 20000, seed: int = 0, names: Optional[Sequence[str]] = None
                   ) -> Dict[str, List[Check]]:
    suite = _suite(N, seed)
    names = list(suite) if names is None else list(names)
    unknown = [n for n in names if n not in suite]
    if unknown:
        raise ProtocolError(f"unknown validator(s): {', '.join(unknown)}")
    return {n: suite[n]() for n in names}
