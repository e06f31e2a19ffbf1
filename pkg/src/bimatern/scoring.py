"""Pointwise and probabilistic prediction scores.

All scores are negatively oriented: smaller values indicate better
predictions. Besides RMSE/MAE and the closed-form Gaussian CRPS and SCRPS,
this module provides Rao-Blackwellized Monte-Carlo estimators for predictive
laws that are mixtures of Gaussians (conditional mean/variance pairs drawn
from a posterior sampler).
"""

from __future__ import annotations

import numpy as np
from scipy.stats import norm

SQRT_PI = np.sqrt(np.pi)


class ScoreError(Exception):
    pass


def _check_pair(pred, obs):
    pred = np.asarray(pred, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if pred.shape != obs.shape:
        raise ScoreError("prediction and observation lengths differ")
    if pred.size == 0:
        raise ScoreError("empty input")
    return pred, obs


def rmse(pred, obs):
    """Root mean squared error."""
    pred, obs = _check_pair(pred, obs)
    return float(np.sqrt(np.mean((pred - obs) ** 2)))


def mae(pred, obs):
    """Mean absolute error."""
    pred, obs = _check_pair(pred, obs)
    return float(np.mean(np.abs(pred - obs)))


def crps_gauss(mu, sigma, y):
    """Continuous ranked probability score of a Gaussian predictive law.

    Negatively oriented closed form sigma * (z (2 Phi(z) - 1) + 2 phi(z)
    - 1/sqrt(pi)) with z the standardized error.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ScoreError("sigma must be positive")
    z = (y - mu) / sigma
    val = sigma * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - 1.0 / SQRT_PI)
    if val.ndim == 0:
        return float(val)
    return val


def expected_abs_error_gauss(mu, sigma, y):
    """E|X - y| for X ~ N(mu, sigma^2)."""
    return mean_abs_gauss(np.asarray(mu, dtype=np.float64) - y, np.square(sigma))


def scrps_gauss(mu, sigma, y):
    """Scaled CRPS of a Gaussian predictive law.

    Negatively oriented: E|X - y| / E|X - X'| + 0.5 log E|X - X'| with
    E|X - X'| = 2 sigma / sqrt(pi) for independent copies X, X'.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ScoreError("sigma must be positive")
    spread = 2.0 * sigma / SQRT_PI
    val = expected_abs_error_gauss(mu, sigma, y) / spread + 0.5 * np.log(spread)
    if val.ndim == 0:
        return float(val)
    return val


def mean_abs_gauss(mu, var):
    """E|X| for X ~ N(mu, var): 2 sigma phi(mu/sigma) + mu (2 Phi(mu/sigma) - 1)."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.sqrt(np.asarray(var, dtype=np.float64))
    r = mu / sigma
    val = 2.0 * sigma * norm.pdf(r) + mu * (2.0 * norm.cdf(r) - 1.0)
    if val.ndim == 0:
        return float(val)
    return val


def _check_mixture(mu1, var1, mu2, var2):
    mu1 = np.asarray(mu1, dtype=np.float64)
    var1 = np.asarray(var1, dtype=np.float64)
    mu2 = np.asarray(mu2, dtype=np.float64)
    var2 = np.asarray(var2, dtype=np.float64)
    n = len(mu1)
    if not (len(var1) == len(mu2) == len(var2) == n):
        raise ScoreError("mixture draws must have equal lengths")
    if n < 2:
        raise ScoreError("need at least 2 paired mixture draws")
    if np.any(var1 <= 0) or np.any(var2 <= 0):
        raise ScoreError("mixture variances must be positive")
    return mu1, var1, mu2, var2


def crps_rb(mu1, var1, mu2, var2, y):
    """Rao-Blackwellized CRPS estimate for a Gaussian mixture predictive law.

    Takes two independent sets of N conditional (mean, variance) draws; the
    inner Gaussian expectations are evaluated in closed form so only the
    mixing variables are sampled.
    """
    mu1, var1, mu2, var2 = _check_mixture(mu1, var1, mu2, var2)
    err = np.mean(mean_abs_gauss(mu1 - y, var1))
    spread = np.mean(mean_abs_gauss(mu1 - mu2, var1 + var2))
    return float(err - 0.5 * spread)


def scrps_rb(mu1, var1, mu2, var2, y):
    """Rao-Blackwellized SCRPS estimate for a Gaussian mixture predictive law.

    Ratio-plus-log form: Ehat|X-y| / Ehat|X-X'| + 0.5 log Ehat|X-X'| with
    both expectations Rao-Blackwellized over the mixing draws.
    """
    mu1, var1, mu2, var2 = _check_mixture(mu1, var1, mu2, var2)
    err = np.mean(mean_abs_gauss(mu1 - y, var1))
    spread = np.mean(mean_abs_gauss(mu1 - mu2, var1 + var2))
    return float(err / spread + 0.5 * np.log(spread))
