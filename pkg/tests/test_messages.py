import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import invwishart, norm

from svihmm.messages import (
    ModelStateError,
    EmissionSurrogate,
    brute_force_beliefs,
    estimate_pi,
    expected_log_density,
    expected_transition,
    forward_backward,
)
from svihmm.model import GlobalVariational, NiwParams, Prior, ValidationError, niw_to_natural


def test_expected_transition_digamma_examples():
    # natural parameter u = alpha - 1
    np.testing.assert_allclose(expected_transition([[0.0, 0.0]]), np.exp(-1.0) * np.ones((1, 2)), rtol=1e-14)
    np.testing.assert_allclose(expected_transition([[1.0, 1.0]]), np.exp(-5 / 6) * np.ones((1, 2)), rtol=1e-14)
    assert np.exp(-1.0) == pytest.approx(0.367879, abs=1e-6)
    assert np.exp(-5 / 6) == pytest.approx(0.434598, abs=1e-6)


def test_expected_transition_concentration_limit():
    rho = np.array([0.2, 0.5, 0.3])
    At = expected_transition(1e6 * rho[None, :] - 1)
    np.testing.assert_allclose(At[0], rho, atol=1e-4)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31))
def test_expected_transition_bounds(K, seed):
    wA = np.random.default_rng(seed).gamma(0.5, 3.0, size=(K, K)) - 0.9
    At = expected_transition(wA)
    assert np.all(At > 0) and np.all(At <= 1)
    assert np.all(At.sum(1) <= 1 + 1e-12)


def test_estimate_pi_examples():
    np.testing.assert_allclose(estimate_pi(np.zeros((4, 4))), np.full(4, 0.25), atol=1e-12)
    pi = estimate_pi(np.array([[9.0, 1.0], [5.0, 5.0]]) - 1)
    np.testing.assert_allclose(pi, [5 / 6, 1 / 6], atol=1e-12)
    EA = np.array([[0.9, 0.1], [0.5, 0.5]])
    assert np.abs(pi @ EA - pi).max() <= 1e-10


def _random_niw(rng, p):
    B = rng.normal(size=(p, p))
    Sigma0 = B @ B.T + 0.5 * np.eye(p)
    return NiwParams(rng.normal(size=p), rng.uniform(0.5, 5), Sigma0, p + 2 + rng.uniform(1, 10))


def _mc_loglik(std, y, n, rng):
    p = len(std.mu0)
    Sig = invwishart(df=std.nu0, scale=std.Sigma0).rvs(size=n, random_state=rng).reshape(n, p, p)
    C = np.linalg.cholesky(Sig)
    mu = std.mu0 + np.einsum("nij,nj->ni", np.linalg.cholesky(Sig / std.kappa0), rng.standard_normal((n, p)))
    z = np.linalg.solve(C, (y - mu)[..., None])[..., 0]
    vals = (-0.5 * p * np.log(2 * np.pi) - np.log(np.diagonal(C, axis1=1, axis2=2)).sum(1)
            - 0.5 * (z**2).sum(1))
    return vals.mean(), vals.std(ddof=1) / np.sqrt(n)


def test_expected_log_density_monte_carlo():
    rng = np.random.default_rng(2024)
    for _ in range(10):
        p = int(rng.integers(1, 4))
        std = _random_niw(rng, p)
        y = std.mu0 + rng.normal(size=p) * 2
        est, se = _mc_loglik(std, y, 200_000, rng)
        closed = expected_log_density(niw_to_natural(std), y)[0]
        assert abs(closed - est) <= 3 * se, (closed, est, se)


def test_expected_log_density_concentrated_limit():
    sig2 = 2.5
    std = NiwParams([1.5], 1e8, [[1e8 * sig2]], 1e8)
    y = np.array([0.3])
    got = expected_log_density(niw_to_natural(std), y)[0]
    assert got == pytest.approx(norm(1.5, np.sqrt(sig2)).logpdf(0.3), abs=1e-4)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**31))
def test_expected_log_density_translation(p, seed):
    rng = np.random.default_rng(seed)
    std = _random_niw(rng, p)
    y = rng.normal(size=(5, p)) * 3
    shift = rng.normal(size=p) * 10
    moved = NiwParams(std.mu0 + shift, std.kappa0, std.Sigma0, std.nu0)
    np.testing.assert_allclose(expected_log_density(niw_to_natural(moved), y + shift),
                               expected_log_density(niw_to_natural(std), y), rtol=1e-12, atol=1e-10)


def test_emission_surrogate_matches_single_block():
    rng = np.random.default_rng(5)
    K, p = 3, 2
    blocks = [niw_to_natural(_random_niw(rng, p)) for _ in range(K)]
    prior = Prior(np.zeros(K), blocks[0])
    w = GlobalVariational(np.zeros((K, K)), np.stack([b.u1 for b in blocks]), np.array([b.u2 for b in blocks]),
                          np.stack([b.u3 for b in blocks]), np.array([b.u4 for b in blocks]), prior)
    y = rng.normal(size=(7, p))
    got = EmissionSurrogate(w)(y)
    for k in range(K):
        np.testing.assert_allclose(got[:, k], expected_log_density(blocks[k], y), rtol=1e-12, atol=1e-12)


def _instance(rng, K, L):
    pi = rng.dirichlet(np.ones(K))
    A = rng.dirichlet(np.ones(K), size=K) * rng.uniform(0.3, 1.0, size=(K, 1))
    logP = rng.normal(scale=3.0, size=(L, K)) - 2.0
    return pi, A, logP


def _assert_beliefs_close(a, b, tol):
    np.testing.assert_allclose(a.marginals, b.marginals, atol=tol, rtol=0)
    if a.L > 1:
        np.testing.assert_allclose(a.pairwise, b.pairwise, atol=tol, rtol=0)
    np.testing.assert_allclose(a.logNorm, b.logNorm, atol=tol, rtol=0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 3), st.integers(1, 8), st.integers(0, 2**31))
def test_forward_backward_matches_enumeration(K, L, seed):
    pi, A, logP = _instance(np.random.default_rng(seed), K, L)
    _assert_beliefs_close(forward_backward(pi, A, logP), brute_force_beliefs(pi, A, logP), 1e-10)


def test_forward_backward_single_state():
    logP = np.array([[-1.0], [-2.5], [0.3]])
    b = forward_backward([1.0], [[1.0]], logP)
    np.testing.assert_array_equal(b.marginals, 1.0)
    np.testing.assert_array_equal(b.pairwise, 1.0)
    assert b.logNorm == pytest.approx(logP.sum(), abs=1e-14)


def test_forward_backward_symmetric():
    b = forward_backward([0.5, 0.5], np.full((2, 2), 0.5), np.full((5, 2), -1.3))
    np.testing.assert_allclose(b.marginals, 0.5, atol=1e-15)
    np.testing.assert_allclose(b.pairwise, 0.25, atol=1e-15)


def test_brute_force_single_node():
    pi = np.array([0.3, 0.7])
    logP = np.array([[-1.0, 0.5]])
    b = brute_force_beliefs(pi, np.eye(2), logP)
    v = pi * np.exp(logP[0])
    np.testing.assert_allclose(b.marginals[0], v / v.sum(), atol=1e-15)
    np.testing.assert_allclose(brute_force_beliefs([1.0], [[1.0]], np.zeros((4, 1))).marginals, 1.0)


def test_brute_force_cap():
    with pytest.raises(ValidationError):
        brute_force_beliefs(np.full(4, 0.25), np.full((4, 4), 0.25), np.zeros((12, 4)))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 4), st.integers(2, 30), st.integers(0, 2**31))
def test_pairwise_consistency_and_normalization(K, L, seed):
    pi, A, logP = _instance(np.random.default_rng(seed), K, L)
    b = forward_backward(pi, A, logP)
    np.testing.assert_allclose(b.marginals.sum(1), 1.0, atol=1e-10)
    np.testing.assert_allclose(b.pairwise.sum((1, 2)), 1.0, atol=1e-10)
    np.testing.assert_allclose(b.pairwise.sum(2), b.marginals[:-1], atol=1e-8)
    np.testing.assert_allclose(b.pairwise.sum(1), b.marginals[1:], atol=1e-8)
    np.testing.assert_allclose(b.trans, b.pairwise.sum(0), atol=1e-12)
    nb = forward_backward(pi, A, logP, pairwise=False)
    np.testing.assert_allclose(nb.trans, b.trans, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 4), st.integers(2, 20), st.integers(0, 2**31))
def test_likelihood_scaling_invariance(K, L, seed):
    rng = np.random.default_rng(seed)
    pi, A, logP = _instance(rng, K, L)
    shift = rng.normal(scale=50, size=L)
    a = forward_backward(pi, A, logP)
    b = forward_backward(pi, A, logP + shift[:, None])
    np.testing.assert_allclose(a.marginals, b.marginals, atol=1e-12)
    np.testing.assert_allclose(a.pairwise, b.pairwise, atol=1e-12)
    assert b.logNorm - shift.sum() == pytest.approx(a.logNorm, abs=1e-9)


def test_lognorm_nonincreasing_when_appending():
    rng = np.random.default_rng(8)
    pi, A, logP = _instance(rng, 3, 40)
    logP = -np.abs(logP)
    norms = [forward_backward(pi, A, logP[:t]).logNorm for t in range(1, 41)]
    assert np.all(np.diff(norms) <= 1e-12)


def test_long_chain_no_underflow():
    rng = np.random.default_rng(9)
    pi, A, _ = _instance(rng, 3, 1)
    logP = rng.normal(scale=1.0, size=(20_000, 3)) - 700.0
    b = forward_backward(pi, A, logP)
    assert np.isfinite(b.logNorm) and np.all(np.isfinite(b.marginals))


def test_dead_emission_row_is_model_state_error():
    logP = np.zeros((3, 2))
    logP[1] = -np.inf
    with pytest.raises(ModelStateError):
        forward_backward([0.5, 0.5], np.full((2, 2), 0.5), logP)
    logP[1, 0] = np.nan
    with pytest.raises(ModelStateError):
        forward_backward([0.5, 0.5], np.full((2, 2), 0.5), logP)
    # a single impossible state is clamped rather than rejected
    logP = np.zeros((3, 2))
    logP[1, 0] = -np.inf
    b = forward_backward([0.5, 0.5], np.full((2, 2), 0.5), logP)
    assert b.marginals[1, 0] == 0.0
