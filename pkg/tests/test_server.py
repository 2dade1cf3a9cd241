import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from modfed.core import ClientPayload, Dataset, ModelState, ProtocolError, ProtocolParams, RngStream, StepRule, make_orthonormal_set
from modfed.modulation import draw_client_randomness
from modfed.privacy import Accountant, PrivacyBudget
from modfed.server import (DebiasedMoments, adaptive_step, aggregate_second_moment, debias_covariance,
                           debias_cross_moment, gradient_batch, gradient_estimate, round_moments,
                           run_protocol, run_round, true_gradient, update_beta)


def _payloads(G, y=None):
    y = np.zeros(len(G)) if y is None else y
    return [ClientPayload(np.asarray(g, float), float(v)) for g, v in zip(G, y)]


def test_second_moment_examples():
    e1 = np.eye(3)[0]
    np.testing.assert_array_equal(aggregate_second_moment(_payloads([e1])), np.outer(e1, e1))
    np.testing.assert_array_equal(aggregate_second_moment(_payloads([e1, -e1])), np.outer(e1, e1))


def test_second_moment_naive_oracle(rng):
    G = rng.normal(size=(30, 5))
    ref = sum(np.outer(g, g) for g in G) / 30
    S = aggregate_second_moment(_payloads(G))
    np.testing.assert_allclose(S, ref, atol=1e-12)
    assert np.array_equal(S, S.T)


def test_debias_exact_cancellation():
    p = ProtocolParams(alpha=0.3, lam=0.8, m=2)
    V = make_orthonormal_set(5, 2, rng=0)
    S = p.lam**2 / 4 * V.projector + 0.7**2 * np.eye(5)
    np.testing.assert_allclose(debias_covariance(S, V, p, 0.7), 0.0, atol=1e-15)


def test_cross_moment_examples(rng):
    p = ProtocolParams(alpha=0.4, lam=0.0)
    X = rng.normal(size=(10, 3))
    assert np.all(debias_cross_moment(_payloads(X), p) == 0)
    Y = rng.normal(size=10)
    Z = debias_cross_moment(_payloads(0.6 * X, Y), p)
    np.testing.assert_allclose(Z, X.T @ Y / 10, atol=1e-14)


def test_gradient_examples(rng):
    m = DebiasedMoments(np.eye(2), rng.normal(size=(2, 2)), np.array([1.0, -2.0]))
    np.testing.assert_array_equal(gradient_estimate(m, np.zeros(2)), [-1.0, 2.0])


def test_noise_free_gradient_is_centralized(rng):
    p = ProtocolParams(alpha=0.35, lam=0.0)
    X, Y, b = rng.normal(size=(40, 4)), rng.normal(size=40), rng.normal(size=4)
    V = make_orthonormal_set(4, 1, orthogonal_to=b, rng=1)
    mom = round_moments(0.65 * X, Y, V, p, 0.0, b)
    np.testing.assert_allclose(mom.G, true_gradient(X, Y, b), atol=1e-12)


def test_gradient_and_cross_moment_unbiased_mc(rng):
    p = ProtocolParams(alpha=0.45, lam=0.6, omega=1.4)
    K, d, N = 60, 4, 100_000
    X = rng.normal(size=(K, d)) / 2
    Y, b = rng.normal(size=K), rng.normal(size=d)
    V = make_orthonormal_set(d, 1, orthogonal_to=b, rng=2)
    Gs = []
    for i in range(N // 5000):
        dr = draw_client_randomness(RngStream(3, ("mc", i)), K, d, 1, 0.7, replicates=5000)
        Gs.append(gradient_batch(X, Y, b, V, p, 0.7, dr))
    G = np.vstack(Gs)
    se = G.std(axis=0, ddof=1) / math.sqrt(N)
    assert np.all(np.abs(G.mean(axis=0) - true_gradient(X, Y, b)) <= 4 * se)
    # beta = 0 isolates -Z, whose mean must be -(1/K) X^T Y
    Z = -np.vstack([gradient_batch(X, Y, np.zeros(d), V, p, 0.7,
                                   draw_client_randomness(RngStream(4, ("z", i)), K, d, 1, 0.7, replicates=5000))
                    for i in range(N // 5000)])
    assert np.all(np.abs(Z.mean(axis=0) - X.T @ Y / K) <= 4 * Z.std(axis=0, ddof=1) / math.sqrt(N))


def test_update_examples():
    b = np.array([0.3, 0.4])
    np.testing.assert_array_equal(update_beta(b, np.zeros(2), 0.5, 1.0), b)
    out = update_beta(np.array([2.0, 0.0]), np.array([-2.0, 0.0]), 1.0, 2.0)
    np.testing.assert_allclose(out, [2.0, 0.0])
    assert np.linalg.norm(out) == pytest.approx(2.0, rel=1e-15)
    np.testing.assert_array_equal(update_beta(b, np.ones(2), 10.0, math.inf), b - 10.0)


@given(seed=st.integers(0, 10**6), c=st.floats(1e-3, 1e3))
def test_update_respects_radius(seed, c):
    g = np.random.default_rng(seed)
    out = update_beta(g.normal(size=5) * c, g.normal(size=5) * c * 10, g.uniform(0.01, 10), c)
    assert np.linalg.norm(out) <= c * (1 + 1e-12)


def test_adaptive_step_examples(rng):
    assert adaptive_step(np.eye(3), 0.8) == pytest.approx(0.8)
    assert adaptive_step(np.diag([4.0, 1.0]), 1.0) == pytest.approx(0.25)
    A = rng.normal(size=(6, 6))
    A = A + A.T
    ref = np.max(np.abs(np.linalg.eigvals(A).real))
    assert adaptive_step(A, 1.0) == pytest.approx(1.0 / ref, rel=1e-8)
    indef = np.diag([-3.0, 1.0])
    assert adaptive_step(indef, 1.0) == pytest.approx(1 / 3)
    with pytest.raises(ProtocolError):
        adaptive_step(np.zeros((2, 2)), 1.0)


def _well_conditioned(seed, K=200, d=4):
    g = np.random.default_rng(seed)
    X = g.normal(size=(K, d))
    X /= np.max(np.linalg.norm(X, axis=1))
    Y = X @ g.normal(size=d) + 0.1 * g.normal(size=K)
    return Dataset(X, Y)


def test_noise_free_protocol_converges_to_ols():
    data = _well_conditioned(0)
    p = ProtocolParams(alpha=0.5, lam=0.0, rounds=500, step=StepRule("lipschitz", 1.0))
    run = run_protocol(data, p, None, seed=1, sigma_dp=0.0, keep_records=False)
    ols = np.linalg.lstsq(data.X, data.Y, rcond=None)[0]
    assert np.linalg.norm(run.beta - ols) <= 1e-3


def test_protocol_is_deterministic_and_accounted():
    data = _well_conditioned(1)
    p = ProtocolParams(rounds=10)
    b = PrivacyBudget.for_protocol(4.0, p)
    r1, r2 = run_protocol(data, p, b, seed=5), run_protocol(data, p, b, seed=5)
    assert [r.summary() for r in r1.records] == [r.summary() for r in r2.records]
    assert len(r1.accountant.entries) == 10
    assert r1.accountant.eps <= 4.0 + 1e-9
    for rec in r1.records:
        assert abs(rec.V[:, 0] @ rec.beta_in) <= 1e-10 * max(1.0, np.linalg.norm(rec.beta_in))
        assert np.linalg.norm(rec.beta_out) <= p.clip_radius * (1 + 1e-12)
    r3 = run_protocol(data, p, b, seed=6)
    assert not np.array_equal(r1.beta, r3.beta)


def test_single_client_round():
    data = Dataset(np.array([[0.3, -0.2, 0.1]]), np.array([0.5]))
    p = ProtocolParams(step=StepRule("fixed", 0.1))
    state, rec = run_round(ModelState(np.zeros(3)), data, p, 0.5, RngStream(0), Accountant(), 0.01)
    assert state.round_index == 1 and np.all(np.isfinite(state.beta))
    assert rec.rho_cumulative == 0.01


def test_budget_round_mismatch_rejected():
    data = _well_conditioned(2)
    with pytest.raises(ProtocolError):
        run_protocol(data, ProtocolParams(rounds=5), PrivacyBudget.for_protocol(1.0, ProtocolParams(), rounds=10), 0)
