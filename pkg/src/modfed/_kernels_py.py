"""Pure numpy implementations of the per-client hot loops.

Shapes: ``X`` is (K, d); batched arrays carry a leading replicate axis R.
Every function mirrors a routine of the compiled ``_kernels`` module.
"""

import numpy as np

BACKEND = "python"


def privatize(X, V, phases, noise, one_minus_alpha, scale, omega):
    """(1-a) x_i + scale * sum_j cos(w <x_i, v_j> + phi_ij) v_j + xi_i for all i, r."""
    out = one_minus_alpha * X[None, :, :]
    for j in range(V.shape[1]):
        v = np.ascontiguousarray(V[:, j])
        proj = X @ v
        coef = scale * np.cos(omega * proj[None, :] + phases[:, :, j])
        out = out + coef[:, :, None] * v[None, None, :]
    return out + noise


def privatize_single(X, v, phases, noise, one_minus_alpha, lam, omega):
    v = np.ascontiguousarray(v)
    proj = X @ v
    coef = lam * np.cos(omega * proj[None, :] + phases)
    out = one_minus_alpha * X[None, :, :] + coef[:, :, None] * v[None, None, :]
    return out + noise


def second_moment(G):
    K = G.shape[1]
    S = np.matmul(np.swapaxes(G, 1, 2), G) / K
    return 0.5 * (S + np.swapaxes(S, 1, 2))


def cross_moment(G, y):
    return np.einsum("rkd,k->rd", G, y) / G.shape[1]


def beta_moment(G, beta):
    s = G @ beta
    return np.einsum("rkd,rk->rd", G, s) / G.shape[1]
