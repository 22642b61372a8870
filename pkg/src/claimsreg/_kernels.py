"""Compiled inner loops for the Bernoulli-logit likelihood and its gradient.

The claims block is a CSR matrix passed as (indptr, indices, data). The
transcendental functions are left to numpy, whose vectorized versions are
several times faster than scalar calls inside these loops.
"""
import numba
import numpy as np


@numba.njit(cache=True)
def linear_predictor(dense, indptr, indices, data, b_dense, b_claims):
    n, k = dense.shape
    eta = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(k):
            acc += dense[i, j] * b_dense[j]
        for t in range(indptr[i], indptr[i + 1]):
            acc += data[t] * b_claims[indices[t]]
        eta[i] = acc
    return eta


@numba.njit(cache=True)
def loglik_and_score(dense, indptr, indices, data, x, eta, e, log1p_e, n_claims):
    """Given eta, e = exp(-|eta|) and log1p(e), return the log-likelihood sum and
    its gradient w.r.t. the dense and claims coefficients."""
    n, k = dense.shape
    g_dense = np.zeros(k)
    g_claims = np.zeros(n_claims)
    loglik = 0.0
    for i in range(n):
        if eta[i] >= 0:
            pi = 1.0 / (1.0 + e[i])
            loglik += (x[i] - 1.0) * eta[i] - log1p_e[i]
        else:
            pi = e[i] / (1.0 + e[i])
            loglik += x[i] * eta[i] - log1p_e[i]
        r = x[i] - pi
        for j in range(k):
            g_dense[j] += r * dense[i, j]
        for t in range(indptr[i], indptr[i + 1]):
            g_claims[indices[t]] += r * data[t]
    return loglik, g_dense, g_claims


def bernoulli_logit_grad(dense, indptr, indices, data, x, b_dense, b_claims):
    eta = linear_predictor(dense, indptr, indices, data, b_dense, b_claims)
    e = np.exp(-np.abs(eta))
    return loglik_and_score(dense, indptr, indices, data, x, eta, e, np.log1p(e),
                            b_claims.shape[0])
