"""Shared fixtures and independent dense oracles.

The oracle functions here deliberately use explicit matrix inverses and
plain formulas so they stay independent of the Cholesky-based paths they
check.
"""

import math

import numpy as np
import pytest


def dense_log_marginal(corr, basis_mat, outputs):
    """Integrated log likelihood via explicit inverses (constants dropped)."""
    n = corr.shape[0]
    corr_inv = np.linalg.inv(corr)
    if basis_mat is None or basis_mat.shape[1] == 0:
        q = 0
        s2 = outputs @ corr_inv @ outputs
        logdet_gram = 0.0
    else:
        q = basis_mat.shape[1]
        gram = basis_mat.T @ corr_inv @ basis_mat
        beta = np.linalg.solve(gram, basis_mat.T @ corr_inv @ outputs)
        resid = outputs - basis_mat @ beta
        s2 = resid @ corr_inv @ resid
        logdet_gram = np.linalg.slogdet(gram)[1]
    logdet_corr = np.linalg.slogdet(corr)[1]
    return -0.5 * logdet_corr - 0.5 * logdet_gram - 0.5 * (n - q) * math.log(s2)


def dense_gls(corr, basis_mat, outputs):
    """(beta_hat, s2) via explicit inverses."""
    corr_inv = np.linalg.inv(corr)
    gram = basis_mat.T @ corr_inv @ basis_mat
    beta = np.linalg.solve(gram, basis_mat.T @ corr_inv @ outputs)
    resid = outputs - basis_mat @ beta
    return beta, float(resid @ corr_inv @ resid)


def dense_q_matrix(corr, basis_mat):
    corr_inv = np.linalg.inv(corr)
    if basis_mat is None or basis_mat.shape[1] == 0:
        return corr_inv
    gram_inv = np.linalg.inv(basis_mat.T @ corr_inv @ basis_mat)
    proj = np.eye(corr.shape[0]) - basis_mat @ gram_inv @ basis_mat.T @ corr_inv
    return corr_inv @ proj


def dense_predict(corr, cross, basis_mat, basis_at, outputs, self_corr=1.0):
    """(location, scale factor) with explicit inverses, per test column of cross."""
    corr_inv = np.linalg.inv(corr)
    gram = basis_mat.T @ corr_inv @ basis_mat
    gram_inv = np.linalg.inv(gram)
    beta = gram_inv @ basis_mat.T @ corr_inv @ outputs
    locations, factors = [], []
    for j in range(cross.shape[1]):
        c_vec = cross[:, j]
        h_vec = basis_at[j]
        loc = h_vec @ beta + c_vec @ corr_inv @ (outputs - basis_mat @ beta)
        c_short = self_corr - c_vec @ corr_inv @ c_vec
        h_gap = h_vec - basis_mat.T @ corr_inv @ c_vec
        factors.append(c_short + h_gap @ gram_inv @ h_gap)
        locations.append(loc)
    return np.asarray(locations), np.asarray(factors)


def central_difference(fun, x, index, step):
    xp = np.array(x, dtype=float)
    xm = np.array(x, dtype=float)
    xp[index] += step
    xm[index] -= step
    return (fun(xp) - fun(xm)) / (2.0 * step)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
