"""Evaluation metrics: label alignment, transition error, held-out predictive."""
from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import _kernels
from .messages import ModelStateError, scaled_likelihoods
from .model import GlobalVariational, HmmParams, stationary_distribution


def align_states(fitted_means, true_means):
    """Optimal matching of fitted to true states by squared mean distance.

    Returns ``perm`` with ``perm[j]`` the fitted state matched to true state
    ``j``, so ``fitted_means[perm]`` lines up with ``true_means``.
    """
    f = np.atleast_2d(fitted_means)
    t = np.atleast_2d(true_means)
    if f.shape != t.shape:
        raise ValueError("fitted and true means must have the same shape")
    cost = ((t[:, None, :] - f[None, :, :]) ** 2).sum(-1)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(t), dtype=int)
    perm[rows] = cols
    return perm


def transition_error(w: GlobalVariational, truth: HmmParams):
    """Frobenius distance between the aligned variational mean of A and A."""
    A_hat, mu_hat, _ = w.posterior_means()
    perm = align_states(mu_hat, truth.means)
    return float(np.linalg.norm(A_hat[np.ix_(perm, perm)] - truth.A))


def gaussian_logpdf(y, means, covs):
    """L x K Gaussian log densities."""
    y = np.atleast_2d(y)
    K, p = means.shape
    out = np.empty((y.shape[0], K))
    for k in range(K):
        C = np.linalg.cholesky(covs[k])
        z = np.linalg.solve(C, (y - means[k]).T)
        out[:, k] = (-0.5 * p * np.log(2 * np.pi) - np.log(np.diag(C)).sum()
                     - 0.5 * np.einsum("ij,ij->j", z, z))
    return out


def hmm_log_likelihood(y, pi, A, means, covs):
    """log p(y_1:L) of an HMM with fixed parameters (scaled forward pass)."""
    P, shift = scaled_likelihoods(gaussian_logpdf(y, means, covs))
    _, logc = _kernels.forward(np.ascontiguousarray(pi, dtype=float),
                               np.ascontiguousarray(A, dtype=float), P)
    if not np.all(np.isfinite(logc)):
        raise ModelStateError("forward pass lost all probability mass")
    return float(logc.sum() + shift.sum())


def predictive_log_prob(w: GlobalVariational, test):
    """Average per-observation log density of ``test`` under plug-in means.

    Uses E_q[A], the NIW posterior means of (mu_k, Sigma_k) and the
    stationary distribution of E_q[A] as initial distribution.
    """
    test = np.atleast_2d(np.asarray(test, dtype=float))
    if len(test) < 1:
        raise ValueError("need at least one held-out observation")
    A_hat, mu_hat, Sigma_hat = w.posterior_means()
    pi = stationary_distribution(A_hat)
    return hmm_log_likelihood(test, pi, A_hat, mu_hat, Sigma_hat) / len(test)
