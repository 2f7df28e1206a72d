import itertools

import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from svihmm.metrics import align_states, hmm_log_likelihood, predictive_log_prob, transition_error
from svihmm.model import GlobalVariational, HmmParams, NiwParams, Prior, niw_to_natural, sample_hmm
from svihmm.synthetic import make_dd_params, make_rc_params


def _concentrated(A, means, covs, scale=1e9):
    """A variational state whose posterior means are (A, means, covs)."""
    K, p = np.shape(means)
    blocks = [niw_to_natural(NiwParams(m, scale, np.asarray(S) * (scale - p - 1), scale)) for m, S in zip(means, covs)]
    prior = Prior(np.zeros(K), blocks[0])
    return GlobalVariational(np.asarray(A, float) * scale - 1, np.stack([b.u1 for b in blocks]),
                             np.array([b.u2 for b in blocks]), np.stack([b.u3 for b in blocks]),
                             np.array([b.u4 for b in blocks]), prior)


def _from_rows(A, means, covs):
    """Exact Dirichlet means A (rows need not be concentrated)."""
    w = _concentrated(np.full_like(np.asarray(A, float), 1.0), means, covs)
    return GlobalVariational(np.asarray(A, float) * 1e6 - 1, w.w1, w.w2, w.w3, w.w4, w.prior)


def test_align_examples():
    means = np.array([[0.0, 0.0], [5.0, 1.0], [-3.0, 2.0]])
    perm = np.array([2, 0, 1])
    fitted = np.empty_like(means)
    fitted[perm] = means
    np.testing.assert_array_equal(align_states(fitted, means), perm)
    np.testing.assert_array_equal(align_states(means, means), [0, 1, 2])
    two = np.array([[0.0], [10.0]])
    noisy = two[::-1] + np.array([[0.4], [-0.3]])
    np.testing.assert_array_equal(align_states(noisy, two), [1, 0])


def test_transition_error_examples():
    hp = make_dd_params()
    w = _from_rows(hp.A, hp.means, hp.covs)
    assert transition_error(w, hp) == pytest.approx(0.0, abs=1e-5)
    uniform = _from_rows(np.full((8, 8), 1 / 8), hp.means, hp.covs)
    expected = np.sqrt(8 * (0.874**2 + 0.124**2 + 6 * 0.125**2))
    assert transition_error(uniform, hp) == pytest.approx(expected, abs=1e-5)
    assert expected == pytest.approx(2.6427289, abs=1e-7)


def test_transition_error_relabel_invariant():
    hp = make_rc_params()
    rng = np.random.default_rng(0)
    A = rng.dirichlet(np.ones(8), size=8)
    w = _from_rows(A, hp.means + rng.normal(size=(8, 2)), hp.covs)
    perm = rng.permutation(8)
    assert transition_error(w.permuted(perm), hp) == pytest.approx(transition_error(w, hp), abs=1e-12)


def test_predictive_examples():
    w = _concentrated([[1.0]], [[0.0]], [[[1.0]]])
    assert predictive_log_prob(w, [[0.0]]) == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-6)
    assert predictive_log_prob(w, [[0.0], [0.0]]) == pytest.approx(-0.91894, abs=1e-5)


def test_hmm_likelihood_matches_enumeration():
    rng = np.random.default_rng(4)
    pi = np.array([0.3, 0.7])
    A = np.array([[0.8, 0.2], [0.35, 0.65]])
    means = np.array([[0.0, 1.0], [2.0, -1.0]])
    covs = np.array([np.eye(2), [[2.0, 0.3], [0.3, 0.5]]])
    y = rng.normal(size=(7, 2))
    dens = np.stack([multivariate_normal(means[k], covs[k]).logpdf(y) for k in range(2)], 1)
    scores = [np.log(pi[x[0]]) + sum(np.log(A[a, b]) for a, b in zip(x[:-1], x[1:])) + dens[np.arange(7), x].sum()
              for x in itertools.product(range(2), repeat=7)]
    assert hmm_log_likelihood(y, pi, A, means, covs) == pytest.approx(logsumexp(scores), abs=1e-10)


def test_true_parameters_score_best_on_average():
    hp = make_dd_params()
    truth = _from_rows(hp.A, hp.means, hp.covs)
    rng = np.random.default_rng(1)
    wins = 0
    for s in range(20):
        _, y = sample_hmm(hp, 500, 100 + s)
        A = 0.7 * hp.A + 0.3 * rng.dirichlet(np.ones(8), size=8)
        pert = _from_rows(A, hp.means + rng.normal(scale=0.5, size=(8, 2)), hp.covs * 1.3)
        wins += predictive_log_prob(truth, y) >= predictive_log_prob(pert, y)
    assert wins > 10
