import math

import numpy as np
import pytest

from modfed.core import ClientPayload, Dataset, ProtocolError, ProtocolParams, RngStream, make_orthonormal_set, standardize
from modfed.estimators import dpsgd_fedavg_round, ols, one_shot_estimate, r_squared, run_dpsgd, run_one_shot
from modfed.modulation import privatize_clients
from modfed.privacy import PrivacyBudget


def test_one_shot_noise_free_equals_ols(rng):
    p = ProtocolParams(alpha=0.3, lam=0.0)
    X, Y = rng.normal(size=(50, 4)), rng.normal(size=50)
    V = make_orthonormal_set(4, 1, rng=0)
    res = one_shot_estimate(0.7 * X, V, p, 0.0, 0.0, y=Y)
    np.testing.assert_allclose(res.beta_hat, ols(Dataset(X, Y)), atol=1e-10)
    assert not res.used_lstsq


def test_one_shot_zero_response(rng):
    p = ProtocolParams()
    X = rng.normal(size=(20, 3))
    V = make_orthonormal_set(3, 1, rng=1)
    G, _ = privatize_clients(X, V, p, 0.5, RngStream(1))
    res = one_shot_estimate([ClientPayload(g, 0.0) for g in G], V, p, 0.5, ridge_gamma=0.1)
    assert np.all(res.gamma_hat == 0) and np.all(res.beta_hat == 0)


def test_one_shot_gamma_unbiased_mc(rng):
    p = ProtocolParams(alpha=0.5, lam=0.4)
    K, d, N = 40, 3, 100_000
    X, Y = rng.normal(size=(K, d)) / 2, rng.normal(size=K)
    V = make_orthonormal_set(d, 1, rng=2)
    from modfed import kernels
    from modfed.modulation import apply_draws, draw_client_randomness
    vals = []
    for i in range(N // 10_000):
        H = apply_draws(X, V, p, draw_client_randomness(RngStream(5, ("g", i)), K, d, 1, 0.6, replicates=10_000))
        vals.append(kernels.cross_moment(H, Y) / (1 - p.alpha))
    G = np.vstack(vals)
    assert np.all(np.abs(G.mean(axis=0) - X.T @ Y / K) <= 4 * G.std(axis=0, ddof=1) / math.sqrt(N))


def test_one_shot_singular_needs_ridge():
    p = ProtocolParams(lam=0.0)
    X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    with pytest.raises(ProtocolError):
        one_shot_estimate(0.5 * X, np.eye(2)[0], p, 0.0, 0.0, y=np.ones(3))
    res = one_shot_estimate(0.5 * X, np.eye(2)[0], p, 0.0, 0.1, y=np.ones(3))
    assert np.all(np.isfinite(res.beta_hat))


def test_one_shot_ledger_has_one_entry(rng):
    data = Dataset(rng.normal(size=(100, 3)) / 3, rng.normal(size=100))
    p = ProtocolParams()
    b = PrivacyBudget.for_protocol(2.0, p, rounds=1)
    _, acct = run_one_shot(data, p, b, 0.1, seed=0)
    assert len(acct.entries) == 1 and acct.eps <= 2.0 + 1e-9
    with pytest.raises(ProtocolError):
        run_one_shot(data, p, PrivacyBudget.for_protocol(2.0, p, rounds=10), 0.1, seed=0)


def test_ols_examples(rng):
    Y = rng.normal(size=4)
    np.testing.assert_allclose(ols(Dataset(np.eye(4), Y)), Y, atol=1e-14)
    X = rng.normal(size=(30, 3))
    np.testing.assert_allclose(ols(Dataset(X, 2 * X[:, 0])), [2, 0, 0], atol=1e-10)
    Y = rng.normal(size=30)
    b = ols(Dataset(X, Y))
    assert np.linalg.norm(X.T @ X @ b - X.T @ Y) <= 1e-8 * np.linalg.norm(X.T @ Y)
    with pytest.raises(ProtocolError):
        ols(Dataset(np.column_stack([X[:, 0], X[:, 0]]), Y))


def test_dpsgd_reductions(rng):
    X, Y, b = rng.normal(size=(25, 3)), rng.normal(size=25), rng.normal(size=3)
    data = Dataset(X, Y)
    step = dpsgd_fedavg_round(b, data, math.inf, 0.3, 0.0, RngStream(0))
    np.testing.assert_allclose(step, b - 0.3 * (X.T @ (X @ b - Y)) / 25, atol=1e-14)
    big = dpsgd_fedavg_round(b, data, 1e9, 0.3, 0.0, RngStream(0))
    np.testing.assert_allclose(big, step, atol=1e-14)


def test_dpsgd_clipping_bound():
    X = np.tile([[1.0, 0.0]], (8, 1))
    data = Dataset(X, -2 * np.ones(8))  # each gradient has norm 2 at beta = 0
    out = dpsgd_fedavg_round(np.zeros(2), data, 1.0, 1.0, 0.0, RngStream(0))
    assert np.linalg.norm(out) <= 1.0 + 1e-12


def test_dpsgd_ledger_and_determinism(rng):
    data = Dataset(rng.normal(size=(50, 3)) / 3, rng.normal(size=50))
    b = PrivacyBudget.for_dpsgd(3.0, 1.0, rounds=10)
    b1, a1 = run_dpsgd(data, 1.0, 0.5, b, seed=3)
    b2, _ = run_dpsgd(data, 1.0, 0.5, b, seed=3)
    np.testing.assert_array_equal(b1, b2)
    assert len(a1.entries) == 10 and a1.eps <= 3.0 + 1e-9


def test_r_squared_examples(rng):
    X, b = rng.normal(size=(20, 2)), rng.normal(size=2)
    assert r_squared(b, Dataset(X, X @ b)) == pytest.approx(1.0)
    Y = rng.normal(size=20)
    Y -= Y.mean()
    assert r_squared(np.zeros(2), Dataset(X, Y)) == pytest.approx(0.0, abs=1e-14)
    assert r_squared(np.array([50.0, -50.0]), Dataset(X, Y)) < 0


def test_r_squared_invariant_under_consistent_scaling(rng):
    X = rng.normal(3, 2, (40, 3))
    Y = X @ np.array([1.0, -0.5, 0.2]) + rng.normal(size=40)
    raw = Dataset(X, Y)
    std = standardize(raw)
    b_std = ols(std)
    fs, ts = std.feature_scale, std.target_scale
    # map standardized coefficients back: y = ts.c + ts.s * (((x - fs.c)/fs.s) @ b)
    b_raw = ts.scale * b_std / fs.scale
    intercept = ts.center - b_raw @ fs.center
    pred_raw = X @ b_raw + intercept
    r_raw = 1 - np.sum((Y - pred_raw) ** 2) / np.sum((Y - Y.mean()) ** 2)
    assert r_squared(b_std, std) == pytest.approx(r_raw, rel=1e-12)
