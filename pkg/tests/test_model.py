import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svihmm.model import (
    DirichletNat,
    HmmParams,
    NiwNat,
    NiwParams,
    ValidationError,
    niw_from_natural,
    niw_to_natural,
    sample_hmm,
    stationary_distribution,
)
from svihmm.synthetic import make_dd_params


def test_niw_to_natural_examples():
    nat = niw_to_natural(NiwParams([0.0], 1.0, [[1.0]], 4.0))
    assert nat.u1 == pytest.approx([0.0]) and nat.u2 == 1.0
    np.testing.assert_allclose(nat.u3, [[1.0]])
    assert nat.u4 == 7.0

    nat = niw_to_natural(NiwParams([2.0], 3.0, [[5.0]], 4.0))
    assert nat.u1 == pytest.approx([6.0]) and nat.u2 == 3.0
    np.testing.assert_allclose(nat.u3, [[17.0]])
    assert nat.u4 == 7.0


def test_niw_from_natural_examples():
    std = niw_from_natural(NiwNat([0.0], 1.0, [[1.0]], 7.0))
    assert std.mu0 == pytest.approx([0.0]) and std.kappa0 == 1.0
    np.testing.assert_allclose(std.Sigma0, [[1.0]])
    assert std.nu0 == 4.0

    std = niw_from_natural(NiwNat([6.0], 3.0, [[17.0]], 7.0))
    assert std.mu0 == pytest.approx([2.0]) and std.kappa0 == 3.0
    np.testing.assert_allclose(std.Sigma0, [[5.0]])
    assert std.nu0 == 4.0


@st.composite
def niw_params(draw):
    p = draw(st.integers(1, 3))
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(p, p))
    S = B @ B.T + p * np.eye(p)
    return NiwParams(rng.normal(size=p) * 5, draw(st.floats(0.01, 100)), S,
                     p + 2 + draw(st.floats(0.01, 50)))


@settings(max_examples=60, deadline=None)
@given(niw_params())
def test_niw_round_trip(x):
    back = niw_from_natural(niw_to_natural(x))
    np.testing.assert_allclose(back.mu0, x.mu0, atol=1e-12, rtol=1e-12)
    np.testing.assert_allclose(back.Sigma0, x.Sigma0, atol=1e-12, rtol=1e-12)
    assert back.kappa0 == pytest.approx(x.kappa0, abs=1e-12)
    assert back.nu0 == pytest.approx(x.nu0, abs=1e-12)


def test_niw_validation():
    with pytest.raises(ValidationError):
        NiwParams([0.0], 0.0, [[1.0]], 4.0)
    with pytest.raises(ValidationError):
        NiwParams([0.0, 0.0], 1.0, [[1.0, 2.0], [2.0, 1.0]], 5.0)
    with pytest.raises(ValidationError):
        NiwParams([0.0], 1.0, [[1.0]], 3.0)
    with pytest.raises(ValidationError):
        niw_from_natural(NiwNat([0.0], -1.0, [[1.0]], 7.0))
    with pytest.raises(ValidationError):
        # u3 - u1 u1^T / u2 = 1 - 4 < 0
        niw_from_natural(NiwNat([2.0], 1.0, [[1.0]], 7.0))


def test_stationary_examples():
    np.testing.assert_allclose(stationary_distribution([[0.5, 0.5], [0.5, 0.5]]), [0.5, 0.5])
    np.testing.assert_allclose(stationary_distribution([[0.9, 0.1], [0.5, 0.5]]), [5 / 6, 1 / 6], atol=1e-12)
    np.testing.assert_allclose(stationary_distribution(make_dd_params().A), np.full(8, 1 / 8), atol=1e-12)


def test_stationary_matches_linear_solve():
    A = np.array([[0.9, 0.1], [0.5, 0.5]])
    M = np.vstack([(A.T - np.eye(2))[:1], np.ones(2)])
    expected = np.linalg.solve(M, [0.0, 1.0])
    np.testing.assert_allclose(stationary_distribution(A), expected, atol=1e-12)


def test_stationary_rejects_periodic():
    # period-2 chain whose stationary law is not uniform: iterates oscillate
    with pytest.raises(ValidationError):
        stationary_distribution([[0.0, 0.5, 0.5], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31))
def test_stationary_fixed_point(K, seed):
    A = np.random.default_rng(seed).dirichlet(np.ones(K), size=K)
    pi = stationary_distribution(A)
    assert np.abs(pi @ A - pi).max() <= 1e-10
    assert np.all(pi >= 0) and pi.sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-0.999, 50), min_size=1, max_size=8))
def test_dirichlet_mean_on_simplex(u):
    m = DirichletNat(u).mean()
    assert np.all(m > 0) and m.sum() == pytest.approx(1.0)


def _params(A, pi0, means, scale=1.0):
    K, p = np.shape(means)
    return HmmParams(pi0, A, means, np.tile(scale * np.eye(p), (K, 1, 1)))


def test_hmm_params_validation():
    with pytest.raises(ValidationError):
        _params([[0.5, 0.6], [0.5, 0.5]], [0.5, 0.5], [[0.0], [1.0]])
    with pytest.raises(ValidationError):
        _params([[0.5, 0.5], [0.5, 0.5]], [0.7, 0.5], [[0.0], [1.0]])
    with pytest.raises(ValidationError):
        HmmParams([1.0], [[1.0]], [[0.0, 0.0]], [[[1.0, 0.0], [0.0, -1.0]]])


def test_sample_absorbing():
    hp = _params(np.eye(3), [1.0, 0.0, 0.0], [[0.0], [5.0], [9.0]])
    x, y = sample_hmm(hp, 500, 3)
    assert np.all(x == 0)


def test_sample_degenerate_emissions():
    hp = _params([[0.8, 0.2], [0.3, 0.7]], [0.5, 0.5], [[1.0, -2.0], [4.0, 3.0]], scale=1e-12)
    x, y = sample_hmm(hp, 1000, 5)
    np.testing.assert_allclose(y, hp.means[x], atol=1e-5)


def test_sample_reproducible():
    hp = make_dd_params()
    x1, y1 = sample_hmm(hp, 2000, 11)
    x2, y2 = sample_hmm(hp, 2000, 11)
    assert np.array_equal(x1, x2) and np.array_equal(y1, y2)
    x3, _ = sample_hmm(hp, 2000, 12)
    _, y3 = sample_hmm(hp, 2000, 12)
    assert not np.array_equal(y1, y3)


def test_dd_transition_frequencies():
    hp = make_dd_params()
    x, _ = sample_hmm(hp, 100_000, 1)
    counts = np.zeros((8, 8))
    np.add.at(counts, (x[:-1], x[1:]), 1)
    n = counts.sum(1, keepdims=True)
    freq = counts / n
    se = np.sqrt(hp.A * (1 - hp.A) / n)
    assert np.all(np.abs(freq - hp.A) <= 3 * se + 1e-15)
