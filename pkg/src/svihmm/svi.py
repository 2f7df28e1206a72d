"""Stochastic variational inference for HMMs on subchain minibatches.

Each iteration samples M windows of L consecutive observations uniformly,
runs the local step on each (optionally padded with buffer observations by
``grow_buffer`` until the beliefs at the window ends settle), scales the
interior statistics by the batch factors

    cA = (T - L + 1) / (L - 1),    cPhi = (T - L + 1) / L

and takes a Robbins-Monro step of size rho_n = (1 + n)^-kappa:

    w_{n+1} = (1 - rho_n) w_n + rho_n (u + mean_S c * E[t_S]).

Subchain positions are 1-based and inclusive: a window with ``start`` s and
length L covers observations s..s+L-1 of 1..T.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .batch import FitError, FitTrace, default_prior, initialize
from .messages import (
    Beliefs,
    EmissionSurrogate,
    ModelStateError,
    _assemble,
    estimate_pi,
    expected_log_transition,
    forward_backward,
    scaled_likelihoods,
)
from .metrics import predictive_log_prob
from .model import GlobalVariational, Prior, ValidationError
from .stats import ExpectedStats, expected_stats


@dataclass(frozen=True)
class SubchainSpec:
    """Window ``start..start+L-1`` (1-based) with buffer extents."""
    start: int
    L: int
    bufLeft: int = 0
    bufRight: int = 0

    @property
    def stop(self):
        """1-based inclusive end of the interior."""
        return self.start + self.L - 1

    @property
    def interior(self):
        """0-based slice of the interior."""
        return slice(self.start - 1, self.start - 1 + self.L)

    @property
    def window(self):
        """0-based slice of interior plus buffers."""
        return slice(self.start - 1 - self.bufLeft, self.start - 1 + self.L + self.bufRight)

    def check(self, T):
        if self.start < 1 or self.stop > T:
            raise ValidationError(f"subchain {self.start}..{self.stop} outside 1..{T}")
        if self.start - self.bufLeft < 1 or self.stop + self.bufRight > T:
            raise ValidationError("buffers extend past the sequence")
        return self


@dataclass(frozen=True)
class SviConfig:
    L: int
    M: int = 1
    kappa: float = 0.5
    iters: int = 100
    epsilon: float = 1e-6
    growU: int = 8
    useGrowBuf: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.L < 2:
            raise ValidationError("subchain length L must be at least 2")
        if self.M < 1:
            raise ValidationError("minibatch size M must be at least 1")
        if not 0.5 <= self.kappa <= 1.0:
            raise ValidationError(f"forgetting rate kappa must lie in [0.5, 1], got {self.kappa}")
        if self.iters < 0:
            raise ValidationError("iters must be non-negative")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        if self.growU < 1:
            raise ValidationError("growU must be a positive integer")

    @classmethod
    def from_half_width(cls, half_width, **kw):
        return cls(L=2 * half_width + 1, **kw)


def sample_subchain(T, L, rng) -> SubchainSpec:
    if not 2 <= L <= T:
        raise ValidationError(f"need 2 <= L <= T, got L={L}, T={T}")
    return SubchainSpec(int(rng.integers(1, T - L + 2)), L)


def batch_factors(T, L):
    if not 2 <= L <= T:
        raise ValidationError(f"need 2 <= L <= T, got L={L}, T={T}")
    n = T - L + 1
    return n / (L - 1), n / L


def step_size(n, kappa):
    return (1.0 + n) ** (-kappa)


def _target(prior: Prior, c, stats: ExpectedStats):
    cA, cPhi = c
    ph = prior.phi
    return (prior.uA[None, :] + cA * stats.trans,
            ph.u1[None, :] + cPhi * stats.s1,
            ph.u2 + cPhi * stats.s2,
            ph.u3[None] + cPhi * stats.s3,
            ph.u4 + cPhi * stats.s4)


def natural_gradient(w: GlobalVariational, prior: Prior, c, stats: ExpectedStats):
    """Noisy natural gradient u + c * E[t_S] - w, as (A, n1, n2, n3, n4) arrays."""
    return tuple(t - x for t, x in zip(_target(prior, c, stats), w.arrays()))


def flatten(grad):
    return np.concatenate([np.ravel(g) for g in grad])


def minibatch_update(w: GlobalVariational, prior: Prior, c, stats_list, rho) -> GlobalVariational:
    if not stats_list:
        raise ValidationError("minibatch must contain at least one subchain")
    total = stats_list[0]
    for s in stats_list[1:]:
        total = total + s
    M = len(stats_list)
    mean = ExpectedStats(total.trans / M, total.s1 / M, total.s2 / M, total.s3 / M)
    target = _target(prior, c, mean)
    new = GlobalVariational(*((1 - rho) * x + rho * t for x, t in zip(w.arrays(), target)), prior)
    try:
        return new.validate()
    except ValidationError as exc:
        raise FitError(f"invalid variational state after step (rho={rho}): {exc}", state=w) from exc


@dataclass
class GrowBufResult:
    beliefs: Beliefs
    spec: SubchainSpec
    residuals: list = field(default_factory=list)

    @property
    def added(self):
        return self.spec.bufLeft + self.spec.bufRight


class _Window:
    """Scaled messages over a window [a, b) with incremental extension."""

    def __init__(self, y, a, b, pi, A, emit):
        self.y, self.pi, self.A, self.emit = y, pi, A, emit
        self.a, self.b = a, b
        self.P, self.shift = scaled_likelihoods(emit(y[a:b]))
        self.alpha, self.logc = self._forward(self.P)
        self.beta = _kernels.backward(A, self.P)

    def _forward(self, P):
        alpha, logc = _kernels.forward(self.pi, self.A, P)
        if not np.all(np.isfinite(logc)):
            raise ModelStateError("forward pass lost all probability mass")
        return alpha, logc

    def grow(self, na, nb):
        left, right = self.a - na, nb - self.b
        parts_P, parts_s = [self.P], [self.shift]
        if left:
            Pl, sl = scaled_likelihoods(self.emit(self.y[na:self.a]))
            parts_P.insert(0, Pl)
            parts_s.insert(0, sl)
        if right:
            Pr, sr = scaled_likelihoods(self.emit(self.y[self.b:nb]))
            parts_P.append(Pr)
            parts_s.append(sr)
        P = np.concatenate(parts_P)
        if left:
            # the forward recursion is rooted at the new left edge
            self.alpha, self.logc = self._forward(P)
        elif right:
            ext, logc = _kernels.extend_forward(self.A, Pr, self.alpha[-1], right)
            self.alpha = np.concatenate([self.alpha, ext])
            self.logc = np.concatenate([self.logc, logc])
        if right:
            self.beta = _kernels.backward(self.A, P)
        elif left:
            ext = _kernels.extend_backward(self.A, P[:left + 1], self.beta[0], left)
            self.beta = np.concatenate([ext, self.beta])
        self.P, self.shift = P, np.concatenate(parts_s)
        self.a, self.b = na, nb

    def belief_at(self, i):
        v = self.alpha[i - self.a] * self.beta[i - self.a]
        return v / v.sum()

    def beliefs(self, s, e, pairwise):
        i, j = s - self.a, e - self.a
        logNorm = self.logc.sum() + self.shift.sum()
        return _assemble(self.alpha[i:j], self.beta[i:j], self.A, self.P[i:j], logNorm, pairwise)


def grow_buffer(y, spec: SubchainSpec, w: GlobalVariational | None, epsilon, growU,
                pi=None, Atilde=None, emit=None, pairwise=False) -> GrowBufResult:
    """Pad a subchain until the beliefs at its two ends stop moving.

    Starting from the bare window, extends the buffer by ``growU``
    observations on each side (clipped at the sequence ends), reruns the
    message pass over the buffered window with ``pi`` at its left edge, and
    stops once the L1 change of q(x) at both interior endpoints is at most
    ``epsilon`` or the window covers the whole sequence. Buffer beliefs are
    dropped; the returned beliefs cover the interior only.

    ``pi``, ``Atilde`` and ``emit`` default to the surrogates of ``w``; pass
    them to share one set of surrogates across a minibatch.
    """
    y = np.atleast_2d(y)
    T = len(y)
    spec = SubchainSpec(spec.start, spec.L).check(T)
    if pi is None:
        pi = estimate_pi(w.wA)
    if Atilde is None:
        Atilde = np.exp(expected_log_transition(w.wA))
    if emit is None:
        emit = EmissionSurrogate(w)
    s, e = spec.start - 1, spec.start - 1 + spec.L
    win = _Window(y, s, e, np.ascontiguousarray(pi), np.ascontiguousarray(Atilde), emit)
    ends = (win.belief_at(s), win.belief_at(e - 1))
    residuals = []
    while win.a > 0 or win.b < T:
        win.grow(max(0, win.a - growU), min(T, win.b + growU))
        new = (win.belief_at(s), win.belief_at(e - 1))
        r = max(np.abs(new[0] - ends[0]).sum(), np.abs(new[1] - ends[1]).sum())
        residuals.append(float(r))
        ends = new
        if r <= epsilon:
            break
    out = SubchainSpec(spec.start, spec.L, s - win.a, win.b - e)
    return GrowBufResult(win.beliefs(s, e, pairwise), out, residuals)


def run_svihmm(y, K, prior: Prior | None = None, config: SviConfig | None = None,
               init: GlobalVariational | None = None, validation=None) -> FitTrace:
    """Fit by SVIHMM; one trace row per minibatch update.

    Trace columns: iter, rho, objective (average predictive log-probability
    of ``validation`` after the step, NaN without validation data),
    buffer_added_total (buffer observations over the minibatch) and
    wall_seconds (update time, excluding the objective evaluation).
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    T = len(y)
    config = config or SviConfig(L=min(T, 20))
    if not 2 <= config.L <= T:
        raise ValidationError(f"need 2 <= L <= T, got L={config.L}, T={T}")
    prior = prior if prior is not None else default_prior(y, K)
    w = init if init is not None else initialize(y, K, prior, config.seed)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed).spawn(2)[1]))
    c = batch_factors(T, config.L)
    trace = FitTrace(w)
    for n in range(config.iters):
        t0 = time.perf_counter()
        pi = np.ascontiguousarray(estimate_pi(w.wA))
        Atilde = np.ascontiguousarray(np.exp(expected_log_transition(w.wA)))
        emit = EmissionSurrogate(w)
        stats_list = []
        added = 0
        for _ in range(config.M):
            spec = sample_subchain(T, config.L, rng)
            sl = spec.interior
            if config.useGrowBuf:
                res = grow_buffer(y, spec, None, config.epsilon, config.growU, pi, Atilde, emit)
                beliefs = res.beliefs
                added += res.added
            else:
                beliefs = forward_backward(pi, Atilde, emit(y[sl]), pairwise=False)
            stats_list.append(expected_stats(beliefs, y[sl]))
        rho = step_size(n, config.kappa)
        w = minibatch_update(w, prior, c, stats_list, rho)
        elapsed = time.perf_counter() - t0
        objective = float("nan")
        if validation is not None:
            objective = predictive_log_prob(w, validation)
            if not np.isfinite(objective):
                raise FitError(f"non-finite objective at iteration {n}", state=w, iteration=n)
        trace.rows.append({"iter": n, "rho": rho, "objective": objective,
                           "buffer_added_total": added, "wall_seconds": elapsed})
    trace.final = w
    return trace


def stat_envelope(y, K) -> ExpectedStats:
    """Upper bounds on sum over all K^L configurations x of |t_j(x, y)|.

    Exact for the counts (trans, s2); for s1 and s3 the absolute value is
    moved inside the sum over positions.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    L, p = y.shape
    per_pos = float(K) ** (L - 1)
    trans = np.full((K, K), (L - 1) * float(K) ** (L - 2) if L > 1 else 0.0)
    s1 = np.tile(per_pos * np.abs(y).sum(0), (K, 1))
    s2 = np.full(K, per_pos * L)
    s3 = np.tile(per_pos * np.einsum("li,lj->ij", np.abs(y), np.abs(y)), (K, 1, 1))
    return ExpectedStats(trans, s1, s2, s3)


def _scaled_norm(envelope: ExpectedStats, c):
    cA, cPhi = c
    parts = [cA * envelope.trans, cPhi * envelope.s1, cPhi * envelope.s2, cPhi * envelope.s3,
             cPhi * envelope.s4]
    return float(np.linalg.norm(np.concatenate([np.ravel(x) for x in parts])))


def ascent_halfplane_check(exact: Beliefs, approx: Beliefs, w: GlobalVariational, prior: Prior, c,
                           stats_fn, envelope: ExpectedStats):
    """Compare noisy natural gradients from exact and approximate beliefs.

    Returns (dot, eps_bound, ok): the inner product of the two gradients,
    the sufficient tolerance M(w) / ||c t|| with M(w) the larger gradient
    norm and ||c t|| the norm of the c-scaled ``envelope``, and dot > 0.
    """
    g_exact = flatten(natural_gradient(w, prior, c, stats_fn(exact)))
    g_approx = flatten(natural_gradient(w, prior, c, stats_fn(approx)))
    dot = float(g_exact @ g_approx)
    M = max(np.linalg.norm(g_exact), np.linalg.norm(g_approx))
    return dot, float(M / _scaled_norm(envelope, c)), dot > 0
