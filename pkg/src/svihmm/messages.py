"""Expected-parameter surrogates and forward-backward message passing.

The local step replaces probabilities by exponentiated expected log
probabilities under q(A) q(phi):

    Atilde[j, k]  = exp E[ln A_jk]
    ptilde(y | k) = exp E[ln N(y | mu_k, Sigma_k)]

and runs a scaled forward-backward pass with them. Messages are rescaled to
sum to one at every step, so the log-normalizer is the sum of the forward
scaling constants plus the per-row maxima removed from the log likelihoods.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import digamma, logsumexp

from . import _kernels
from .model import GlobalVariational, NiwNat, ValidationError, stationary_distribution

LOG_FLOOR = -1e300
BRUTE_FORCE_CAP = 10**7


class ModelStateError(RuntimeError):
    """The variational state produced an unusable local step."""


@dataclass
class Beliefs:
    """Posterior marginals q(x_t), summed pairwise counts and log-normalizer.

    ``pairwise`` is only materialized on request; long chains keep just the
    summed transition counts ``trans``.
    """
    marginals: np.ndarray
    trans: np.ndarray
    logNorm: float
    pairwise: Optional[np.ndarray] = None

    @property
    def L(self):
        return self.marginals.shape[0]

    @property
    def K(self):
        return self.marginals.shape[1]


@dataclass
class ExpectedParams:
    log_Atilde: np.ndarray
    logPtilde: np.ndarray
    pi_hat: np.ndarray

    @property
    def Atilde(self):
        return np.exp(self.log_Atilde)


def expected_log_transition(wA):
    """E[ln A_jk] for rows with natural parameters wA (concentration wA + 1)."""
    a = np.asarray(wA, dtype=float) + 1.0
    return digamma(a) - digamma(a.sum(-1, keepdims=True))


def expected_transition(wA):
    return np.exp(expected_log_transition(wA))


def estimate_pi(wA):
    """Stationary distribution of the Dirichlet-mean transition matrix."""
    a = np.asarray(wA, dtype=float) + 1.0
    return stationary_distribution(a / a.sum(1, keepdims=True))


def _niw_expected_loglik(y, mu, kappa, S, nu):
    p = mu.shape[0]
    try:
        C = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise ModelStateError("NIW scale matrix is not positive definite") from None
    logdet = 2.0 * np.log(np.diag(C)).sum()
    e_logdet_prec = digamma(0.5 * (nu + 1 - np.arange(1, p + 1))).sum() + p * np.log(2.0) - logdet
    z = solve_triangular(C, (y - mu).T, lower=True)
    maha = nu * np.einsum("ij,ij->j", z, z) + p / kappa
    return -0.5 * p * np.log(2 * np.pi) + 0.5 * e_logdet_prec - 0.5 * maha


def expected_log_density(nat: NiwNat, y):
    """E_q[ln N(y | mu, Sigma)] under one NIW block, for each row of ``y``.

    Closed form (Bishop 2006, ch. 10.2.1): with Lambda = Sigma^{-1} Wishart
    distributed, E ln|Lambda| = sum_i psi((nu + 1 - i) / 2) + p ln 2 - ln|S|
    and E[(y - mu)^T Lambda (y - mu)] = p / kappa + nu (y - m)^T S^{-1} (y - m).
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    u2 = nat.u2
    mu = nat.u1 / u2
    S = nat.u3 - np.outer(nat.u1, nat.u1) / u2
    return _niw_expected_loglik(y, mu, u2, 0.5 * (S + S.T), nat.u4 - 2 - nat.p)


class EmissionSurrogate:
    """Expected log emission densities for a fixed w, vectorized over states.

    Factorizes every NIW scale matrix once so that repeated calls on short
    windows (subchains, buffer growth) stay cheap.
    """

    def __init__(self, w: GlobalVariational):
        mu, kappa, S, nu = w.niw_moments()
        p = w.p
        try:
            C = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise ModelStateError("NIW scale matrix is not positive definite") from None
        logdet = 2.0 * np.log(np.diagonal(C, axis1=1, axis2=2)).sum(1)
        i = np.arange(1, p + 1)
        e_logdet_prec = digamma(0.5 * (nu[:, None] + 1 - i)).sum(1) + p * np.log(2.0) - logdet
        self.mu = mu
        self.nu = nu
        self.Cinv = np.linalg.inv(C)
        self.const = -0.5 * p * np.log(2 * np.pi) + 0.5 * e_logdet_prec - 0.5 * p / kappa

    def __call__(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        out = np.empty((y.shape[0], self.mu.shape[0]))
        for k in range(self.mu.shape[0]):
            z = (y - self.mu[k]) @ self.Cinv[k].T
            out[:, k] = self.const[k] - 0.5 * self.nu[k] * np.einsum("ij,ij->i", z, z)
        return out


def expected_log_densities(w: GlobalVariational, y):
    """L x K matrix of expected log emission densities."""
    return EmissionSurrogate(w)(y)


def expected_params(w: GlobalVariational, y) -> ExpectedParams:
    return ExpectedParams(expected_log_transition(w.wA), expected_log_densities(w, y), estimate_pi(w.wA))


def scaled_likelihoods(logPtilde):
    """Row-max-shifted likelihoods and the removed log offsets."""
    logP = np.asarray(logPtilde, dtype=float)
    if np.isnan(logP).any():
        raise ModelStateError("NaN in expected log densities")
    if np.isposinf(logP).any() or np.all(np.isneginf(logP), axis=1).any():
        raise ModelStateError("emission likelihood row is zero (or infinite) for every state")
    logP = np.maximum(logP, LOG_FLOOR)
    shift = logP.max(axis=1)
    return np.exp(logP - shift[:, None]), shift


def forward_backward(piInit, Atilde, logPtilde, pairwise=True) -> Beliefs:
    """Marginal and pairwise beliefs of the chain with surrogate parameters.

    Args:
        piInit: initial distribution for the first position.
        Atilde: K x K positive surrogate transition matrix (linear scale).
        logPtilde: L x K expected log emission densities.
        pairwise: also return the (L-1) x K x K pairwise beliefs.
    """
    P, shift = scaled_likelihoods(logPtilde)
    A = np.ascontiguousarray(Atilde, dtype=float)
    pi = np.ascontiguousarray(piInit, dtype=float)
    alpha, logc = _kernels.forward(pi, A, P)
    if not np.all(np.isfinite(logc)):
        raise ModelStateError("forward pass lost all probability mass")
    beta = _kernels.backward(A, P)
    return _assemble(alpha, beta, A, P, logc.sum() + shift.sum(), pairwise)


def _assemble(alpha, beta, A, P, logNorm, pairwise):
    marg = _kernels.marginals(alpha, beta)
    if pairwise:
        pw = _kernels.pairwise(alpha, beta, A, P)
        trans = pw.sum(axis=0)
    else:
        pw = None
        trans = _kernels.transition_counts(alpha, beta, A, P)
    return Beliefs(marg, trans, float(logNorm), pw)


def brute_force_beliefs(piInit, Atilde, logPtilde) -> Beliefs:
    """Exact beliefs by enumerating every state sequence (test oracle)."""
    X, q, logZ = enumerate_joint(piInit, Atilde, logPtilde)
    b = beliefs_from_joint(X, q, np.shape(logPtilde)[1])
    b.logNorm = logZ
    return b


def enumerate_joint(piInit, Atilde, logPtilde):
    """All K^L configurations, their exact probabilities and log-normalizer."""
    logP = np.asarray(logPtilde, dtype=float)
    L, K = logP.shape
    if K**L > BRUTE_FORCE_CAP:
        raise ValidationError(f"K^L = {K**L} exceeds the enumeration cap {BRUTE_FORCE_CAP}")
    X = np.array(list(itertools.product(range(K), repeat=L)), dtype=np.int64)
    with np.errstate(divide="ignore"):
        logA = np.log(np.asarray(Atilde, dtype=float))
        logpi = np.log(np.asarray(piInit, dtype=float))
    score = logpi[X[:, 0]] + logP[np.arange(L), X].sum(axis=1)
    if L > 1:
        score = score + logA[X[:, :-1], X[:, 1:]].sum(axis=1)
    logZ = float(logsumexp(score))
    return X, np.exp(score - logZ), logZ


def beliefs_from_joint(X, q, K) -> Beliefs:
    """Marginalize an explicit distribution over configurations."""
    L = X.shape[1]
    marg = np.zeros((L, K))
    for t in range(L):
        np.add.at(marg[t], X[:, t], q)
    pw = np.zeros((max(L - 1, 0), K, K))
    for t in range(1, L):
        np.add.at(pw[t - 1], (X[:, t - 1], X[:, t]), q)
    return Beliefs(marg, pw.sum(axis=0), float("nan"), pw)
