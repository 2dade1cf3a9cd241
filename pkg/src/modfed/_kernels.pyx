# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-client loops. Sums run in client index order."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos

cnp.import_array()

BACKEND = "cython"


def privatize(const double[:, ::1] X, const double[:, ::1] V,
              const double[:, :, ::1] phases, const double[:, :, ::1] noise,
              double one_minus_alpha, double scale, double omega):
    cdef Py_ssize_t R = phases.shape[0], K = X.shape[0], d = X.shape[1], m = V.shape[1]
    cdef Py_ssize_t r, i, j, k
    cdef double proj, c
    out_arr = np.empty((R, K, d))
    cdef double[:, :, ::1] out = out_arr
    coef_arr = np.empty(m)
    cdef double[::1] coef = coef_arr
    projs_arr = np.empty((K, m))
    cdef double[:, ::1] projs = projs_arr
    for i in range(K):
        for j in range(m):
            proj = 0.0
            for k in range(d):
                proj = proj + X[i, k] * V[k, j]
            projs[i, j] = proj
    for r in range(R):
        for i in range(K):
            for j in range(m):
                coef[j] = scale * cos(omega * projs[i, j] + phases[r, i, j])
            for k in range(d):
                c = one_minus_alpha * X[i, k]
                for j in range(m):
                    c = c + coef[j] * V[k, j]
                out[r, i, k] = c + noise[r, i, k]
    return out_arr


def privatize_single(const double[:, ::1] X, const double[::1] v,
                     const double[:, ::1] phases, const double[:, :, ::1] noise,
                     double one_minus_alpha, double lam, double omega):
    cdef Py_ssize_t R = phases.shape[0], K = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t r, i, k
    cdef double proj, coef
    out_arr = np.empty((R, K, d))
    cdef double[:, :, ::1] out = out_arr
    projs_arr = np.empty(K)
    cdef double[::1] projs = projs_arr
    for i in range(K):
        proj = 0.0
        for k in range(d):
            proj = proj + X[i, k] * v[k]
        projs[i] = proj
    for r in range(R):
        for i in range(K):
            coef = lam * cos(omega * projs[i] + phases[r, i])
            for k in range(d):
                out[r, i, k] = (one_minus_alpha * X[i, k] + coef * v[k]) + noise[r, i, k]
    return out_arr


def second_moment(const double[:, :, ::1] G):
    cdef Py_ssize_t R = G.shape[0], K = G.shape[1], d = G.shape[2]
    cdef Py_ssize_t r, i, a, b
    cdef double ga
    out_arr = np.zeros((R, d, d))
    cdef double[:, :, ::1] S = out_arr
    for r in range(R):
        for i in range(K):
            for a in range(d):
                ga = G[r, i, a]
                for b in range(a, d):
                    S[r, a, b] += ga * G[r, i, b]
        for a in range(d):
            for b in range(a, d):
                S[r, a, b] = S[r, a, b] / K
                S[r, b, a] = S[r, a, b]
    return out_arr


def cross_moment(const double[:, :, ::1] G, const double[::1] y):
    cdef Py_ssize_t R = G.shape[0], K = G.shape[1], d = G.shape[2]
    cdef Py_ssize_t r, i, a
    out_arr = np.zeros((R, d))
    cdef double[:, ::1] z = out_arr
    for r in range(R):
        for i in range(K):
            for a in range(d):
                z[r, a] += y[i] * G[r, i, a]
        for a in range(d):
            z[r, a] = z[r, a] / K
    return out_arr


def beta_moment(const double[:, :, ::1] G, const double[::1] beta):
    cdef Py_ssize_t R = G.shape[0], K = G.shape[1], d = G.shape[2]
    cdef Py_ssize_t r, i, a
    cdef double s
    out_arr = np.zeros((R, d))
    cdef double[:, ::1] acc = out_arr
    for r in range(R):
        for i in range(K):
            s = 0.0
            for a in range(d):
                s = s + G[r, i, a] * beta[a]
            for a in range(d):
                acc[r, a] += G[r, i, a] * s
        for a in range(d):
            acc[r, a] = acc[r, a] / K
    return out_arr
