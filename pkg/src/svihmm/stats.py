"""Expected sufficient statistics of the transition rows and NIW emissions."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .messages import Beliefs


@dataclass
class ExpectedStats:
    """Expected transition counts and per-state emission moments.

    s1[k] = sum_t q_t(k) y_t, s2[k] = sum_t q_t(k), s3[k] = sum_t q_t(k) y_t y_t^T.
    The fourth NIW statistic is the same count as s2 and is exposed as an
    alias rather than stored twice.
    """
    trans: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    s3: np.ndarray

    @property
    def s4(self):
        return self.s2

    @property
    def K(self):
        return self.trans.shape[0]

    def scaled(self, cA, cPhi):
        return ExpectedStats(cA * self.trans, cPhi * self.s1, cPhi * self.s2, cPhi * self.s3)

    def __add__(self, other):
        return ExpectedStats(self.trans + other.trans, self.s1 + other.s1,
                             self.s2 + other.s2, self.s3 + other.s3)

    @classmethod
    def zeros(cls, K, p):
        return cls(np.zeros((K, K)), np.zeros((K, p)), np.zeros(K), np.zeros((K, p, p)))


def expected_transition_stats(beliefs: Beliefs):
    if beliefs.L < 2:
        warnings.warn("fewer than two positions: no transitions observable", RuntimeWarning)
        return np.zeros((beliefs.K, beliefs.K))
    if beliefs.pairwise is not None:
        return beliefs.pairwise.sum(axis=0)
    return beliefs.trans.copy()


def expected_emission_stats(beliefs: Beliefs, y):
    """(s1, s2, s3) from marginal beliefs and the matching L x p observations."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    q = beliefs.marginals
    s1 = q.T @ y
    s2 = q.sum(axis=0)
    s3 = np.stack([(y * q[:, k:k + 1]).T @ y for k in range(q.shape[1])])
    s3 = 0.5 * (s3 + np.swapaxes(s3, 1, 2))
    return s1, s2, s3


def expected_stats(beliefs: Beliefs, y) -> ExpectedStats:
    trans = expected_transition_stats(beliefs) if beliefs.L >= 2 else np.zeros((beliefs.K, beliefs.K))
    return ExpectedStats(trans, *expected_emission_stats(beliefs, y))
