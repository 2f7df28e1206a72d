"""Batch structured mean-field variational Bayes.

Coordinate ascent alternates the exact local step (forward-backward over
the whole chain with surrogate parameters) and the conjugate global update
w = u + E_q[t(x, y)]. At the optimal q(x) the entropy and expected
complete-data terms of the ELBO collapse into the log-normalizer of the
local step, leaving

    ELBO = logNorm - sum_j KL(q(A_j) || p(A_j)) - sum_k KL(q(phi_k) || p(phi_k)).

The initial-state term uses the plug-in estimate pi_hat (stationary
distribution of E_q[A]); pi is not learned.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import digamma, gammaln, multigammaln

from .messages import (
    Beliefs,
    expected_log_densities,
    expected_log_transition,
    estimate_pi,
    forward_backward,
)
from .model import GlobalVariational, NiwNat, Prior, ValidationError, make_rng, niw_to_natural, NiwParams
from .stats import ExpectedStats, expected_stats

SUBSAMPLE = 10_000
KMEANS_RESTARTS = 5


class FitError(RuntimeError):
    """A fit produced a non-finite objective; ``state`` holds the offending w."""

    def __init__(self, message, state=None, iteration=None):
        super().__init__(message)
        self.state = state
        self.iteration = iteration


@dataclass
class FitTrace:
    """Per-iteration records of a fit plus the final variational state."""
    final: GlobalVariational
    rows: list = field(default_factory=list)

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def elbo(self):
        return self.column("elbo")


def default_prior(y, K) -> Prior:
    """Weakly informative prior: alpha = 1, NIW centred on the data."""
    y = np.atleast_2d(y)
    p = y.shape[1]
    cov = np.atleast_2d(np.cov(y, rowvar=False))
    return Prior(np.zeros(K), niw_to_natural(NiwParams(y.mean(0), 1.0, cov, p + 3.0)))


def _kmeans(y, K, rng, restarts=KMEANS_RESTARTS):
    """Best-of-``restarts`` k-means (k-means++ seeding plus Lloyd steps)."""
    best, best_inertia = None, np.inf
    for _ in range(restarts):
        with warnings.catch_warnings():
            # an emptied cluster keeps its seed; harmless for initialisation
            warnings.simplefilter("ignore", UserWarning)
            centers, labels = kmeans2(y, K, iter=30, minit="++", seed=rng)
        inertia = ((y - centers[labels]) ** 2).sum()
        if inertia < best_inertia:
            best, best_inertia = centers, inertia
    return best


def initialize(y, K, prior: Prior, seed) -> GlobalVariational:
    """Seeded starting point that breaks label symmetry.

    Emission means are the best of several k-means runs on a subsample of at most
    10,000 observations, every emission covariance is centred on the
    empirical covariance, and transition rows are the prior plus Gamma(1, 1)
    noise.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    rng = make_rng(seed)
    sub = y if len(y) <= SUBSAMPLE else y[rng.choice(len(y), SUBSAMPLE, replace=False)]
    centers = _kmeans(sub, K, rng)
    p = y.shape[1]
    cov = np.atleast_2d(np.cov(y, rowvar=False)) if len(y) > 1 else np.eye(p)
    ph = prior.phi
    kappa, nu = ph.u2, ph.u4 - 2 - p
    blocks = [niw_to_natural(NiwParams(c, kappa, cov * (nu - p - 1), nu)) for c in centers]
    wA = prior.uA[None, :] + rng.gamma(1.0, 1.0, size=(K, K))
    return GlobalVariational(
        wA,
        np.stack([b.u1 for b in blocks]),
        np.array([b.u2 for b in blocks]),
        np.stack([b.u3 for b in blocks]),
        np.array([b.u4 for b in blocks]),
        prior,
    )


def global_update(prior: Prior, stats: ExpectedStats) -> GlobalVariational:
    ph = prior.phi
    w = GlobalVariational(
        prior.uA[None, :] + stats.trans,
        ph.u1[None, :] + stats.s1,
        ph.u2 + stats.s2,
        ph.u3[None] + stats.s3,
        ph.u4 + stats.s4,
        prior,
    )
    return w.validate()


def kl_dirichlet(a, b):
    """KL(Dir(a) || Dir(b)) for concentration vectors (last axis)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a0 = a.sum(-1)
    return (gammaln(a0) - gammaln(a).sum(-1) - gammaln(b.sum(-1)) + gammaln(b).sum(-1)
            + ((a - b) * (digamma(a) - digamma(a0)[..., None])).sum(-1))


def kl_niw(q: NiwNat, p: NiwNat):
    """KL(q || p) between NIW distributions given in natural coordinates.

    Splits into the Wishart divergence on the precision and the expected
    Gaussian divergence of the mean given the covariance.
    """
    d = q.p
    m1, k1, S1, v1 = q.u1 / q.u2, q.u2, q.u3 - np.outer(q.u1, q.u1) / q.u2, q.u4 - 2 - d
    m0, k0, S0, v0 = p.u1 / p.u2, p.u2, p.u3 - np.outer(p.u1, p.u1) / p.u2, p.u4 - 2 - d
    C1 = np.linalg.cholesky(0.5 * (S1 + S1.T))
    C0 = np.linalg.cholesky(0.5 * (S0 + S0.T))
    logdet1 = 2 * np.log(np.diag(C1)).sum()
    logdet0 = 2 * np.log(np.diag(C0)).sum()
    S1inv = np.linalg.inv(S1)
    i = np.arange(1, d + 1)
    psi_d = digamma(0.5 * (v1 + 1 - i)).sum()
    kl_wish = (0.5 * (v1 - v0) * psi_d + 0.5 * v1 * (np.trace(S0 @ S1inv) - d)
               + 0.5 * v0 * (logdet1 - logdet0) + multigammaln(0.5 * v0, d) - multigammaln(0.5 * v1, d))
    dm = m1 - m0
    kl_mean = 0.5 * (d * k0 / k1 - d + d * np.log(k1 / k0) + k0 * v1 * dm @ S1inv @ dm)
    return float(kl_wish + kl_mean)


def kl_global(w: GlobalVariational):
    prior = w.prior
    kA = kl_dirichlet(w.wA + 1.0, prior.uA + 1.0).sum()
    kPhi = sum(kl_niw(w.niw(k), prior.phi) for k in range(w.K))
    return float(kA + kPhi)


def compute_elbo(w: GlobalVariational, logNorm) -> float:
    """ELBO at the optimal q(x); ``logNorm`` must come from the same w."""
    return float(logNorm - kl_global(w))


def local_step(w: GlobalVariational, y, pairwise=False) -> Beliefs:
    logA = expected_log_transition(w.wA)
    logP = expected_log_densities(w, y)
    return forward_backward(estimate_pi(w.wA), np.exp(logA), logP, pairwise=pairwise)


def elbo_fixed_q(w: GlobalVariational, beliefs: Beliefs, y, pi):
    """ELBO for an arbitrary q(x) given by marginal and pairwise beliefs.

    ``pi`` is held fixed, so this is the objective the global update
    maximizes with q(x) frozen.
    """
    q = beliefs.marginals
    pw = beliefs.pairwise
    with np.errstate(divide="ignore", invalid="ignore"):
        logpi = np.log(pi)
        energy = np.where(q[0] > 0, q[0] * logpi, 0.0).sum()
        energy += (beliefs.trans * expected_log_transition(w.wA)).sum()
        energy += (q * expected_log_densities(w, y)).sum()
        xlogx = lambda a: np.where(a > 0, a * np.log(np.where(a > 0, a, 1.0)), 0.0).sum()
        if q.shape[0] == 1:
            entropy = -xlogx(q[0])
        else:
            entropy = -xlogx(pw) + xlogx(q[1:-1])
    return float(energy + entropy - kl_global(w))


def run_batch_vb(y, K, prior: Prior | None = None, seed=0, max_iters=200, rel_tol=1e-6,
                 init: GlobalVariational | None = None, callback=None) -> FitTrace:
    """Coordinate-ascent VB over the full chain.

    Each recorded row holds the ELBO of the current w (with its optimal
    q(x)) and the wall time of that sweep. Stops when the relative ELBO
    change drops below ``rel_tol`` or after ``max_iters`` global updates.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if len(y) < 2:
        raise ValidationError("batch VB needs at least two observations")
    prior = prior if prior is not None else default_prior(y, K)
    w = init if init is not None else initialize(y, K, prior, seed)
    trace = FitTrace(w)
    prev = None
    for it in range(max_iters + 1):
        t0 = time.perf_counter()
        beliefs = local_step(w, y)
        elbo = compute_elbo(w, beliefs.logNorm)
        if not np.isfinite(elbo):
            raise FitError(f"non-finite ELBO at iteration {it}", state=w, iteration=it)
        converged = prev is not None and abs(elbo - prev) <= rel_tol * abs(elbo)
        if converged or it == max_iters:
            trace.rows.append({"iter": it, "elbo": elbo, "seconds": time.perf_counter() - t0})
            break
        w = global_update(prior, expected_stats(beliefs, y))
        trace.rows.append({"iter": it, "elbo": elbo, "seconds": time.perf_counter() - t0})
        if callback is not None:
            callback(it, w, elbo)
        prev = elbo
    trace.final = w
    return trace
