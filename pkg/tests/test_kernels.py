"""The compiled and pure-Python backends must agree; the m=1 paths must agree bit for bit."""

import numpy as np
import pytest

from modfed import kernels
from modfed.core import ProtocolParams, RngStream, make_orthonormal_set
from modfed.modulation import apply_draws, apply_draws_single, draw_client_randomness
from modfed.server import debias_covariance, debias_covariance_single

compiled = kernels.compiled_impl()
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


def _case(seed, R=3, K=17, d=6, m=2):
    g = np.random.default_rng(seed)
    X = g.normal(size=(K, d))
    V = make_orthonormal_set(d, m, rng=seed).V
    ph = g.uniform(0, 2 * np.pi, (R, K, m))
    nz = g.normal(size=(R, K, d))
    return X, V, ph, nz, g.normal(size=K), g.normal(size=d)


def test_backend_selection_reports_name():
    assert kernels.BACKEND in ("cython", "python")
    assert kernels.get_impl("python") is kernels.python_impl


@needs_compiled
@pytest.mark.parametrize("seed", range(5))
def test_backends_agree(seed):
    X, V, ph, nz, y, b = _case(seed)
    py = kernels.python_impl
    args = (X, V, ph, nz, 0.4, 0.3, 1.7)
    G_c, G_p = compiled.privatize(*args), py.privatize(*args)
    np.testing.assert_allclose(G_c, G_p, rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(compiled.privatize_single(X, V[:, 0].copy(), ph[..., 0].copy(), nz, 0.4, 0.3, 1.7),
                               py.privatize_single(X, V[:, 0].copy(), ph[..., 0].copy(), nz, 0.4, 0.3, 1.7),
                               rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(compiled.second_moment(G_p), py.second_moment(G_p), rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(compiled.cross_moment(G_p, y), py.cross_moment(G_p, y), rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(compiled.beta_moment(G_p, b), py.beta_moment(G_p, b), rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("impl", ["python", "compiled"])
def test_second_moment_matches_naive_loop(impl):
    mod = kernels.python_impl if impl == "python" else compiled
    if mod is None:
        pytest.skip("compiled extension not built")
    G = np.random.default_rng(1).normal(size=(2, 9, 4))
    S = mod.second_moment(G)
    for r in range(2):
        ref = np.zeros((4, 4))
        for i in range(9):
            ref += np.outer(G[r, i], G[r, i])
        np.testing.assert_allclose(S[r], ref / 9, atol=1e-12)
        assert np.array_equal(S[r], S[r].T)


@pytest.mark.parametrize("backend", ["python", "compiled"])
def test_single_vector_reduction_bit_identical(backend, monkeypatch):
    mod = kernels.python_impl if backend == "python" else compiled
    if mod is None:
        pytest.skip("compiled extension not built")
    for name in ("privatize", "privatize_single", "second_moment"):
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    import modfed.modulation as modmod
    import modfed.server as srv
    monkeypatch.setattr(modmod, "kernels", kernels)
    monkeypatch.setattr(srv, "kernels", kernels)
    p = ProtocolParams(alpha=0.3, lam=0.7, omega=1.3)
    for t in range(100):
        g = np.random.default_rng(t)
        X = g.normal(size=(12, 5))
        S = make_orthonormal_set(5, 1, rng=t)
        draws = draw_client_randomness(RngStream(t, ("round", t)), 12, 5, 1, 0.8)
        multi = apply_draws(X, S, p, draws)
        single = apply_draws_single(X, S.column(0), p, draws)
        assert np.array_equal(multi, single)
        Sg = mod.second_moment(multi)[0]
        assert np.array_equal(debias_covariance(Sg, S, p, 0.8),
                              debias_covariance_single(Sg, S.column(0), p, 0.8))
