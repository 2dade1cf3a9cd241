import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from modfed.core import ProtocolParams, RngStream, make_orthonormal_set
from modfed.modulation import (draw_client_randomness, expected_pair_distance_sq, lipschitz_constant,
                               modulate, modulate_single, privatize, privatize_clients)

P = ProtocolParams(alpha=0.5, lam=0.2, omega=1.0)


def test_modulate_at_zero():
    v = np.array([0.0, 1.0, 0.0])
    np.testing.assert_allclose(modulate(np.zeros(3), v, [math.pi / 2], P), 0.0, atol=1e-16)
    np.testing.assert_allclose(modulate(np.zeros(3), v, [0.0], P), 0.2 * v)


def test_modulate_vanishes_near_alpha_one():
    p = ProtocolParams(alpha=1 - 1e-9, lam=1e-9)
    out = modulate(np.ones(4), np.eye(4)[0], [0.3], p)
    assert np.linalg.norm(out) < 1e-8


@given(seed=st.integers(0, 10**6))
def test_modulation_offset_bounded_by_lambda(seed):
    g = np.random.default_rng(seed)
    x = g.normal(size=6) * 3
    v = make_orthonormal_set(6, 1, rng=seed).column(0)
    out = modulate(x, v, [g.uniform(0, 2 * np.pi)], P)
    assert np.linalg.norm(out - 0.5 * x) <= 0.2 + 1e-12


@pytest.mark.parametrize("alpha,lam,m,expected", [(0.5, 0.2, 1, 0.7), (0.5, 0.2, 4, 0.6),
                                                  (0.9, 0.05, 1, 0.15)])
def test_lipschitz_constant(alpha, lam, m, expected):
    assert lipschitz_constant(ProtocolParams(alpha=alpha, lam=lam, omega=1.0, m=m)) == pytest.approx(expected, abs=1e-15)


def test_lipschitz_strictly_decreasing_in_m():
    vals = [lipschitz_constant(ProtocolParams(lam=0.3, omega=2.0, m=m)) for m in range(1, 8)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


@given(seed=st.integers(0, 10**6), m=st.integers(1, 4))
def test_lipschitz_property_holds(seed, m):
    g = np.random.default_rng(seed)
    d = 6
    p = ProtocolParams(alpha=g.uniform(0.05, 0.95), lam=g.uniform(0, 2), omega=g.uniform(0.1, 4), m=m)
    V = make_orthonormal_set(d, m, rng=seed)
    x, xp = g.normal(size=(2, 64, d))
    phis = g.uniform(0, 2 * np.pi, (64, m))
    diff = np.linalg.norm(modulate(x, V, phis, p) - modulate(xp, V, phis, p), axis=1)
    assert np.all(diff <= lipschitz_constant(p) * np.linalg.norm(x - xp, axis=1) * (1 + 1e-12))


def test_noise_free_degenerate_release():
    p = ProtocolParams(alpha=0.3, lam=0.0)
    x = np.array([1.0, -2.0, 0.5])
    out = privatize(x, np.eye(3)[0], p, 0.0, rng=4, y=1.5)
    np.testing.assert_array_equal(out.g_tilde, 0.7 * x)
    assert out.y == 1.5


def test_release_is_noisy_when_sigma_positive():
    x = np.ones(3)
    a = privatize(x, np.eye(3)[0], ProtocolParams(lam=0.0), 0.1, rng=1).g_tilde
    assert not np.allclose(a, 0.5 * x)


def test_release_mean_and_covariance_mc():
    """Mean (1-a)x and covariance (lam^2/2m) P_V + sigma^2 I over many draws."""
    p = ProtocolParams(alpha=0.4, lam=0.8, omega=1.5, m=2)
    V = make_orthonormal_set(4, 2, rng=3)
    x = np.array([0.3, -0.2, 0.5, 0.1])
    N, sigma = 100_000, 0.5
    draws = draw_client_randomness(RngStream(9), 1, 4, 2, sigma, replicates=N)
    from modfed.modulation import apply_draws
    G = apply_draws(x[None], V, p, draws)[:, 0]
    sd = G.std(axis=0, ddof=1)
    assert np.all(np.abs(G.mean(axis=0) - 0.6 * x) <= 4 * sd / math.sqrt(N))
    C = np.cov(G.T)
    target = p.lam**2 / 4 * V.projector + sigma**2 * np.eye(4)
    # sd of a sample covariance entry is bounded by sqrt(E[a^2 b^2]/N); use a conservative 4 SE
    c = G - G.mean(axis=0)
    se = np.sqrt(np.einsum("ni,nj->ij", c**2, c**2) / N / N)
    assert np.all(np.abs(C - target) <= 4 * se)


def test_expected_pair_distance_examples():
    p = ProtocolParams(alpha=0.3, lam=0.9, omega=2.0)
    v = np.array([1.0, 0.0, 0.0])
    x = np.array([0.4, 0.1, -0.2])
    xp = x + np.array([0.0, 0.5, 0.3])
    assert expected_pair_distance_sq(x, xp, v, p) == pytest.approx(0.49 * 0.34, abs=1e-15)
    assert expected_pair_distance_sq(x, x, v, p) == 0.0


def test_expected_pair_distance_mc():
    p = ProtocolParams(alpha=0.25, lam=1.1, omega=2.5)
    v = make_orthonormal_set(5, 1, rng=8).column(0)
    g = np.random.default_rng(8)
    x, xp = g.normal(size=(2, 5)) * 0.5
    N = 100_000
    phi = RngStream(8, ("phi",)).generator().uniform(0, 2 * np.pi, N)
    X, XP = np.repeat(x[None], N, 0), np.repeat(xp[None], N, 0)
    s = np.sum((modulate_single(X, v, phi, p) - modulate_single(XP, v, phi, p)) ** 2, axis=1)
    assert abs(s.mean() - expected_pair_distance_sq(x, xp, v, p)) <= 4 * s.std(ddof=1) / math.sqrt(N)


def test_zero_mean_modulation_term():
    N = 100_000
    phi = RngStream(2, ("zm",)).generator().uniform(0, 2 * np.pi, N)
    c = 0.7 * np.cos(1.3 + phi)
    assert abs(c.mean()) <= 4 * c.std(ddof=1) / math.sqrt(N)


def test_client_draws_do_not_depend_on_K():
    small = draw_client_randomness(RngStream(1, ("r",)), 3, 4, 2, 1.0)
    big = draw_client_randomness(RngStream(1, ("r",)), 5, 4, 2, 1.0)
    np.testing.assert_array_equal(small.noise, big.noise[:, :3])
    np.testing.assert_array_equal(small.phases, big.phases[:, :3])
