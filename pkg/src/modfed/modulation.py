"""Client-side cosine-modulated map, its privatized release and sensitivity."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import ClientPayload, OrthonormalSet, as_orthonormal, ProtocolError, ProtocolParams, RngStream

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ClientDraws:
    """Internal randomness of one round for K clients (R replicates)."""

    phases: np.ndarray  # (R, K, m) in [0, 2pi)
    noise: np.ndarray  # (R, K, d), already scaled by sigma_dp


def _check(x: np.ndarray, V: OrthonormalSet, phis: np.ndarray) -> None:
    if x.shape[-1] != V.d:
        raise ProtocolError(f"feature dimension {x.shape[-1]} does not match V ({V.d})")
    if phis.shape[-1] != V.m:
        raise ProtocolError(f"{phis.shape[-1]} phases given for {V.m} modulation vectors")


def lipschitz_constant(params: ProtocolParams) -> float:
    return abs(1.0 - params.alpha) + params.lam * params.omega / math.sqrt(params.m)


def modulate(x, V, phis, params: ProtocolParams) -> np.ndarray:
    """Noise-free map (1-a)x + (lam/sqrt m) sum_j cos(w<x,v_j> + phi_j) v_j.

    ``x`` may be a single vector (d,) or a matrix of rows (K, d); ``phis``
    then has shape (m,) or (K, m).
    """
    V = as_orthonormal(V)
    x = np.asarray(x, dtype=float)
    phis = np.asarray(phis, dtype=float)
    single = x.ndim == 1
    X = np.ascontiguousarray(np.atleast_2d(x))
    ph = np.ascontiguousarray(phis.reshape(1, X.shape[0], -1))
    _check(X, V, ph)
    out = kernels.privatize(X, np.ascontiguousarray(V.V), ph, np.zeros((1,) + X.shape),
                            1.0 - params.alpha, params.lam / math.sqrt(V.m), params.omega)[0]
    return out[0] if single else out


def modulate_single(x, v, phi, params: ProtocolParams) -> np.ndarray:
    """Dedicated m = 1 map (1-a)x + lam cos(w<x,v> + phi) v."""
    x = np.asarray(x, dtype=float)
    v = np.ascontiguousarray(np.asarray(v, dtype=float))
    single = x.ndim == 1
    X = np.ascontiguousarray(np.atleast_2d(x))
    ph = np.ascontiguousarray(np.asarray(phi, dtype=float).reshape(1, X.shape[0]))
    out = kernels.privatize_single(X, v, ph, np.zeros((1,) + X.shape),
                                   1.0 - params.alpha, params.lam, params.omega)[0]
    return out[0] if single else out


def draw_client_randomness(stream: RngStream, K: int, d: int, m: int, sigma_dp: float,
                           replicates: int = 1) -> ClientDraws:
    """Phases and Gaussian noise for ``K`` clients.

    Phases and noise come from separate child streams and are drawn in
    client-major order, so client i's values sit at a fixed offset and do
    not depend on K or on how clients are scheduled.
    """
    phases = stream.child("phase").generator().uniform(0.0, TWO_PI, size=(replicates, K, m))
    z = stream.child("noise").generator().standard_normal(size=(replicates, K, d))
    return ClientDraws(phases=phases, noise=sigma_dp * z)


def apply_draws(X: np.ndarray, V, params: ProtocolParams, draws: ClientDraws) -> np.ndarray:
    """Privatized features (R, K, d) for fixed draws; the multi-vector path."""
    V = as_orthonormal(V)
    X = np.ascontiguousarray(X, dtype=float)
    _check(X, V, draws.phases)
    return kernels.privatize(X, np.ascontiguousarray(V.V), np.ascontiguousarray(draws.phases),
                             np.ascontiguousarray(draws.noise), 1.0 - params.alpha,
                             params.lam / math.sqrt(V.m), params.omega)


def apply_draws_single(X: np.ndarray, v: np.ndarray, params: ProtocolParams,
                       draws: ClientDraws) -> np.ndarray:
    if draws.phases.shape[-1] != 1:
        raise ProtocolError("single-vector path needs exactly one phase per client")
    X = np.ascontiguousarray(X, dtype=float)
    return kernels.privatize_single(X, np.ascontiguousarray(v, dtype=float),
                                    np.ascontiguousarray(draws.phases[..., 0]),
                                    np.ascontiguousarray(draws.noise), 1.0 - params.alpha,
                                    params.lam, params.omega)


def privatize_clients(X, V, params: ProtocolParams, sigma_dp: float, stream: RngStream):
    """One round of client releases; returns ``(g_tilde (K, d), draws)``."""
    V = as_orthonormal(V)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    draws = draw_client_randomness(stream, X.shape[0], X.shape[1], V.m, sigma_dp)
    return apply_draws(X, V, params, draws)[0], draws


def privatize_clients_single(X, v, params: ProtocolParams, sigma_dp: float, stream: RngStream):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    draws = draw_client_randomness(stream, X.shape[0], X.shape[1], 1, sigma_dp)
    return apply_draws_single(X, v, params, draws)[0], draws


def privatize(x, V, params: ProtocolParams, sigma_dp: float, rng, y: float = 0.0) -> ClientPayload:
    """Privatized release of a single client holding ``(x, y)``."""
    if sigma_dp < 0:
        raise ProtocolError("sigma_dp must be non-negative")
    stream = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    g, _ = privatize_clients(np.asarray(x, float)[None, :], V, params, sigma_dp, stream)
    return ClientPayload(g_tilde=g[0], y=float(y))


def expected_pair_distance_sq(x, x_prime, v, params: ProtocolParams) -> float:
    """E_phi ||g(x) - g(x')||^2 for the single-vector map."""
    h = np.asarray(x, float) - np.asarray(x_prime, float)
    delta = params.omega * float(h @ np.asarray(v, float))
    return (1.0 - params.alpha) ** 2 * float(h @ h) + 2.0 * params.lam**2 * math.sin(delta / 2.0) ** 2
