"""Parameter types and conjugate-prior algebra for Gaussian-emission HMMs.

Transition rows carry Dirichlet priors and each emission a normal-inverse-
Wishart (NIW) prior. Variational and prior quantities are kept in natural
coordinates, where conjugate updates are additive:

    Dirichlet(alpha):            u = alpha - 1
    NIW(mu0, kappa0, S0, nu0):   u1 = kappa0 mu0
                                 u2 = kappa0
                                 u3 = S0 + kappa0 mu0 mu0^T
                                 u4 = nu0 + 2 + p

Random numbers come from numpy's counter-based Philox bit generator so that
datasets are reproducible across platforms for a given integer seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels

STATIONARY_TOL = 1e-12
STATIONARY_MAX_ITER = 10_000


class ValidationError(ValueError):
    """Raised when a parameter object violates its invariants."""


def make_rng(seed):
    """Seeded Philox generator used for every random draw in the package."""
    return np.random.Generator(np.random.Philox(int(seed)))


def _cholesky(S, what="matrix"):
    S = np.asarray(S, dtype=float)
    if not np.allclose(S, S.T, atol=1e-12, rtol=0):
        raise ValidationError(f"{what} is not symmetric")
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise ValidationError(f"{what} is not positive definite") from None


@dataclass(frozen=True)
class HmmParams:
    """Generative parameters: initial distribution, transitions, Gaussians."""
    pi0: np.ndarray
    A: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        for name in ("pi0", "A", "means", "covs"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))
        K = self.pi0.shape[0]
        if self.A.shape != (K, K):
            raise ValidationError(f"A must be {K}x{K}, got {self.A.shape}")
        if self.means.ndim != 2 or self.means.shape[0] != K:
            raise ValidationError("means must be K x p")
        p = self.means.shape[1]
        if self.covs.shape != (K, p, p):
            raise ValidationError(f"covs must be {K}x{p}x{p}")
        if np.any(self.A < 0) or np.any(np.abs(self.A.sum(1) - 1) > 1e-12):
            raise ValidationError("A must be row-stochastic")
        if np.any(self.pi0 < 0) or abs(self.pi0.sum() - 1) > 1e-12:
            raise ValidationError("pi0 must lie on the simplex")
        for k in range(K):
            _cholesky(self.covs[k], f"covariance {k}")

    @property
    def K(self):
        return self.pi0.shape[0]

    @property
    def p(self):
        return self.means.shape[1]


@dataclass(frozen=True)
class NiwParams:
    mu0: np.ndarray
    kappa0: float
    Sigma0: np.ndarray
    nu0: float

    def __post_init__(self):
        object.__setattr__(self, "mu0", np.atleast_1d(np.array(self.mu0, dtype=float)))
        object.__setattr__(self, "Sigma0", np.atleast_2d(np.array(self.Sigma0, dtype=float)))
        p = self.mu0.shape[0]
        if self.Sigma0.shape != (p, p):
            raise ValidationError("Sigma0 must be p x p")
        if not self.kappa0 > 0:
            raise ValidationError(f"kappa0 must be positive, got {self.kappa0}")
        if not self.nu0 > p + 2:
            raise ValidationError(f"nu0 must exceed p + 2 = {p + 2}, got {self.nu0}")
        _cholesky(self.Sigma0, "Sigma0")

    @property
    def p(self):
        return self.mu0.shape[0]


@dataclass(frozen=True)
class NiwNat:
    """Natural parameters of a single NIW block."""
    u1: np.ndarray
    u2: float
    u3: np.ndarray
    u4: float

    def __post_init__(self):
        object.__setattr__(self, "u1", np.atleast_1d(np.array(self.u1, dtype=float)))
        object.__setattr__(self, "u3", np.atleast_2d(np.array(self.u3, dtype=float)))
        object.__setattr__(self, "u2", float(self.u2))
        object.__setattr__(self, "u4", float(self.u4))

    @property
    def p(self):
        return self.u1.shape[0]

    def validate(self):
        p = self.p
        if not self.u2 > 0:
            raise ValidationError(f"u2 must be positive, got {self.u2}")
        if not self.u4 > 2 * p + 4:
            raise ValidationError(f"u4 must exceed 2p + 4, got {self.u4}")
        _cholesky(self.u3 - np.outer(self.u1, self.u1) / self.u2, "recovered Sigma0")
        return self


@dataclass(frozen=True)
class DirichletNat:
    """Natural parameter u = alpha - 1 of one Dirichlet row."""
    u: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", np.array(self.u, dtype=float))
        if np.any(self.u <= -1):
            raise ValidationError("Dirichlet natural parameters must exceed -1")

    @property
    def alpha(self):
        return self.u + 1.0

    def mean(self):
        a = self.alpha
        return a / a.sum()


def niw_to_natural(std: NiwParams) -> NiwNat:
    m, k = std.mu0, std.kappa0
    return NiwNat(k * m, k, std.Sigma0 + k * np.outer(m, m), std.nu0 + 2 + std.p)


def niw_from_natural(nat: NiwNat) -> NiwParams:
    if not nat.u2 > 0:
        raise ValidationError(f"u2 must be positive, got {nat.u2}")
    mu0 = nat.u1 / nat.u2
    S = nat.u3 - np.outer(nat.u1, nat.u1) / nat.u2
    return NiwParams(mu0, nat.u2, 0.5 * (S + S.T), nat.u4 - 2 - nat.p)


@dataclass(frozen=True)
class Prior:
    """Hyperparameters u: one Dirichlet vector shared by every row, one NIW."""
    uA: np.ndarray
    phi: NiwNat

    def __post_init__(self):
        object.__setattr__(self, "uA", DirichletNat(self.uA).u)
        self.phi.validate()

    @property
    def K(self):
        return self.uA.shape[0]

    @property
    def p(self):
        return self.phi.p


@dataclass(frozen=True)
class GlobalVariational:
    """Natural parameters of q(A) q(phi), stacked over states.

    wA[j] is the Dirichlet parameter of transition row j; (w1[k], w2[k],
    w3[k], w4[k]) is the NIW block of emission k.
    """
    wA: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray
    w4: np.ndarray
    prior: Prior = field(repr=False)

    @property
    def K(self):
        return self.wA.shape[0]

    @property
    def p(self):
        return self.w1.shape[1]

    def dirichlet(self, j) -> DirichletNat:
        return DirichletNat(self.wA[j])

    def niw(self, k) -> NiwNat:
        return NiwNat(self.w1[k], self.w2[k], self.w3[k], self.w4[k])

    def arrays(self):
        return self.wA, self.w1, self.w2, self.w3, self.w4

    def validate(self):
        if np.any(~np.isfinite(self.wA)) or np.any(self.wA <= -1):
            raise ValidationError("transition natural parameters must exceed -1")
        for k in range(self.K):
            self.niw(k).validate()
        return self

    def expected_A(self):
        a = self.wA + 1.0
        return a / a.sum(1, keepdims=True)

    def niw_moments(self):
        """Standard NIW parameters per state: (means, kappa, scale, nu)."""
        mu = self.w1 / self.w2[:, None]
        S = self.w3 - self.w1[:, :, None] * self.w1[:, None, :] / self.w2[:, None, None]
        S = 0.5 * (S + np.swapaxes(S, 1, 2))
        return mu, self.w2.copy(), S, self.w4 - 2 - self.p

    def posterior_means(self):
        """Point estimates (E[A], E[mu_k], E[Sigma_k]) under q."""
        mu, _, S, nu = self.niw_moments()
        return self.expected_A(), mu, S / (nu - self.p - 1)[:, None, None]

    @classmethod
    def from_prior(cls, prior: Prior):
        K = prior.K
        ph = prior.phi
        return cls(
            np.tile(prior.uA, (K, 1)),
            np.tile(ph.u1, (K, 1)),
            np.full(K, ph.u2),
            np.tile(ph.u3, (K, 1, 1)),
            np.full(K, ph.u4),
            prior,
        )

    def permuted(self, perm):
        """Relabel states so that new state i is old state perm[i]."""
        perm = np.asarray(perm)
        return GlobalVariational(self.wA[np.ix_(perm, perm)], self.w1[perm], self.w2[perm],
                                 self.w3[perm], self.w4[perm], self.prior)


def stationary_distribution(A, tol=STATIONARY_TOL, max_iter=STATIONARY_MAX_ITER):
    """Leading left eigenvector of a row-stochastic matrix via power iteration."""
    A = np.ascontiguousarray(A, dtype=float)
    pi, its = _kernels.power_iteration(A, tol, max_iter)
    if its < 0:
        raise ValidationError(
            f"power iteration did not converge in {max_iter} steps; "
            "transition matrix may be reducible or periodic")
    return pi


def sample_hmm(params: HmmParams, T: int, seed: int):
    """Draw (states, observations) of length T; states are 0-based labels."""
    if T < 1:
        raise ValidationError("T must be at least 1")
    rng = make_rng(seed)
    u = rng.random(T)
    z = rng.standard_normal((T, params.p))
    cum_pi = np.cumsum(params.pi0)
    cum_A = np.cumsum(params.A, axis=1)
    x = _kernels.sample_chain(cum_pi, cum_A, u)
    chol = np.stack([np.linalg.cholesky(S) for S in params.covs])
    y = params.means[x] + np.einsum("tij,tj->ti", chol[x], z)
    return x, y
