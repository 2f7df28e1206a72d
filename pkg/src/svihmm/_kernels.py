"""Compiled inner loops.

Everything here works on plain float64/int64 arrays and is free of Python
objects so numba can compile it in nopython mode. The public wrappers in
``messages`` and ``model`` do validation and shape handling.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def power_iteration(A, tol, max_iter):
    """Left power iteration from the uniform vector.

    Returns (pi, iterations); iterations == -1 means no convergence.
    """
    K = A.shape[0]
    pi = np.full(K, 1.0 / K)
    nxt = np.empty(K)
    for it in range(max_iter):
        for k in range(K):
            acc = 0.0
            for j in range(K):
                acc += pi[j] * A[j, k]
            nxt[k] = acc
        s = nxt.sum()
        diff = 0.0
        for k in range(K):
            nxt[k] /= s
            diff += abs(nxt[k] - pi[k])
        pi[:] = nxt
        if diff < tol:
            return pi, it + 1
    return pi, -1


@njit(cache=True)
def forward(pi, A, P):
    """Scaled forward pass.

    ``P`` holds emission likelihoods already divided by their row maximum.
    Returns normalized filtered messages and the per-step log scaling
    constants. A zero or non-finite constant is reported as -inf in the
    returned log-constants so the caller can raise.
    """
    L, K = P.shape
    alpha = np.empty((L, K))
    logc = np.empty(L)
    s = 0.0
    for k in range(K):
        alpha[0, k] = pi[k] * P[0, k]
        s += alpha[0, k]
    if not (s > 0.0) or not np.isfinite(s):
        logc[0] = -np.inf
        return alpha, logc
    for k in range(K):
        alpha[0, k] /= s
    logc[0] = np.log(s)
    for t in range(1, L):
        s = 0.0
        for k in range(K):
            acc = 0.0
            for j in range(K):
                acc += alpha[t - 1, j] * A[j, k]
            acc *= P[t, k]
            alpha[t, k] = acc
            s += acc
        if not (s > 0.0) or not np.isfinite(s):
            logc[t] = -np.inf
            return alpha, logc
        for k in range(K):
            alpha[t, k] /= s
        logc[t] = np.log(s)
    return alpha, logc


@njit(cache=True)
def backward(A, P):
    """Backward pass with each message rescaled to sum to one."""
    L, K = P.shape
    beta = np.empty((L, K))
    for k in range(K):
        beta[L - 1, k] = 1.0 / K
    tmp = np.empty(K)
    for t in range(L - 2, -1, -1):
        for k in range(K):
            tmp[k] = P[t + 1, k] * beta[t + 1, k]
        s = 0.0
        for j in range(K):
            acc = 0.0
            for k in range(K):
                acc += A[j, k] * tmp[k]
            beta[t, j] = acc
            s += acc
        for j in range(K):
            beta[t, j] /= s
    return beta


@njit(cache=True)
def extend_backward(A, P, beta_first, n):
    """Continue a backward recursion ``n`` steps further to the left.

    ``P`` covers the new rows followed by the first row of the old window;
    ``beta_first`` is the old window's first backward message. Returns the
    ``n`` new messages.
    """
    K = A.shape[0]
    out = np.empty((n, K))
    nxt = beta_first.copy()
    tmp = np.empty(K)
    for i in range(n - 1, -1, -1):
        for k in range(K):
            tmp[k] = P[i + 1, k] * nxt[k]
        s = 0.0
        for j in range(K):
            acc = 0.0
            for k in range(K):
                acc += A[j, k] * tmp[k]
            out[i, j] = acc
            s += acc
        for j in range(K):
            out[i, j] /= s
        nxt = out[i].copy()
    return out


@njit(cache=True)
def extend_forward(A, P, alpha_last, n):
    """Continue a forward recursion ``n`` steps to the right.

    ``P`` holds the likelihood rows of the new positions only. Returns the
    new normalized messages and their log scaling constants.
    """
    K = A.shape[0]
    out = np.empty((n, K))
    logc = np.empty(n)
    prev = alpha_last.copy()
    for i in range(n):
        s = 0.0
        for k in range(K):
            acc = 0.0
            for j in range(K):
                acc += prev[j] * A[j, k]
            acc *= P[i, k]
            out[i, k] = acc
            s += acc
        for k in range(K):
            out[i, k] /= s
        logc[i] = np.log(s)
        prev = out[i].copy()
    return out, logc


@njit(cache=True)
def marginals(alpha, beta):
    L, K = alpha.shape
    out = np.empty((L, K))
    for t in range(L):
        s = 0.0
        for k in range(K):
            out[t, k] = alpha[t, k] * beta[t, k]
            s += out[t, k]
        for k in range(K):
            out[t, k] /= s
    return out


@njit(cache=True)
def pairwise(alpha, beta, A, P):
    L, K = alpha.shape
    out = np.empty((max(L - 1, 0), K, K))
    for t in range(1, L):
        s = 0.0
        for j in range(K):
            for k in range(K):
                v = alpha[t - 1, j] * A[j, k] * P[t, k] * beta[t, k]
                out[t - 1, j, k] = v
                s += v
        for j in range(K):
            for k in range(K):
                out[t - 1, j, k] /= s
    return out


@njit(cache=True)
def transition_counts(alpha, beta, A, P):
    """Sum of pairwise beliefs without materializing them."""
    L, K = alpha.shape
    out = np.zeros((K, K))
    slab = np.empty((K, K))
    for t in range(1, L):
        s = 0.0
        for j in range(K):
            for k in range(K):
                v = alpha[t - 1, j] * A[j, k] * P[t, k] * beta[t, k]
                slab[j, k] = v
                s += v
        for j in range(K):
            for k in range(K):
                out[j, k] += slab[j, k] / s
    return out


@njit(cache=True)
def sample_chain(cum_pi, cum_A, u):
    """Inverse-CDF sampling of a Markov chain from uniforms ``u``."""
    T = u.shape[0]
    K = cum_pi.shape[0]
    x = np.empty(T, dtype=np.int64)
    k = 0
    while k < K - 1 and u[0] >= cum_pi[k]:
        k += 1
    x[0] = k
    for t in range(1, T):
        row = cum_A[x[t - 1]]
        k = 0
        while k < K - 1 and u[t] >= row[k]:
            k += 1
        x[t] = k
    return x
