"""Inverse-Gaussian, NIG and generalized-inverse-Gaussian distributions.

Samplers are vectorized and take an explicit numpy Generator, so independent
chains and replicates get reproducible streams via SeedSequence spawning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import kv, kve


class DistError(Exception):
    pass


@dataclass(frozen=True)
class IgParams:
    """Two-parameter inverse Gaussian IG(a, b), density ~ x^{-3/2} e^{-(a x + b/x)/2}."""

    a: float
    b: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise DistError("IG parameters must be positive")

    @property
    def mean(self):
        return np.sqrt(self.b / self.a)


@dataclass(frozen=True)
class GigParams:
    """GIG(p, a, b), density ~ x^{p-1} e^{-(a x + b/x)/2}."""

    p: float
    a: float
    b: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise DistError("GIG parameters a and b must be positive")


def ig_logpdf(x, a, b):
    """Log-density of IG(a, b) including the normalizing constant.

    The normalizer is sqrt(b/(2 pi)) e^{sqrt(ab)} x^{-3/2}.
    """
    x = np.asarray(x, dtype=np.float64)
    return (
        0.5 * np.log(b)
        - 0.5 * np.log(2.0 * np.pi)
        + np.sqrt(a * b)
        - 1.5 * np.log(x)
        - 0.5 * (a * x + b / x)
    )


def ig_sample(params, rng, size=None):
    """Draw from IG(a, b) via the Michael-Schucany-Haas transformation."""
    a, b = params.a, params.b
    mu = np.sqrt(b / a)  # mean
    lam = b  # shape in the (mean, shape) parameterization
    shape = () if size is None else (int(size),) if np.isscalar(size) else tuple(size)
    z = rng.standard_normal(shape)
    y = z * z
    x1 = mu + mu * mu * y / (2.0 * lam) - mu / (2.0 * lam) * np.sqrt(
        4.0 * mu * lam * y + (mu * y) ** 2
    )
    u = rng.uniform(size=shape)
    out = np.where(u <= mu / (mu + x1), x1, mu * mu / x1)
    if size is None:
        return float(out)
    return out


def ig_sample_vector(a, b, rng):
    """Elementwise IG(a_i, b_i) draws for arrays a, b (broadcast together)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a, b = np.broadcast_arrays(a, b)
    mu = np.sqrt(b / a)
    lam = b
    z = rng.standard_normal(a.shape)
    y = z * z
    x1 = mu + mu * mu * y / (2.0 * lam) - mu / (2.0 * lam) * np.sqrt(
        4.0 * mu * lam * y + (mu * y) ** 2
    )
    u = rng.uniform(size=a.shape)
    return np.where(u <= mu / (mu + x1), x1, mu * mu / x1)


def nig_density(x, mu, eta, gamma=None):
    """NIG density of gamma + mu*v + sqrt(v)*z with v ~ IG(eta, eta).

    gamma defaults to -mu, the centering that gives the distribution zero
    mean.
    """
    val = np.exp(nig_logdensity(x, mu, eta, gamma))
    if val.ndim == 0:
        return float(val)
    return val


def nig_logdensity(x, mu, eta, gamma=None):
    """Log of nig_density, stable for large arguments of K_1."""
    if eta <= 0:
        raise DistError("eta must be positive")
    if gamma is None:
        gamma = -mu
    x = np.asarray(x, dtype=np.float64)
    d = x - gamma
    q = np.sqrt(eta + d * d)
    alpha = np.sqrt(mu * mu + eta)
    # kve = K_1(z) e^{z} keeps the Bessel factor finite in the tails
    return (
        eta
        + mu * d
        + 0.5 * np.log(eta)
        + np.log(alpha)
        - np.log(np.pi)
        - np.log(q)
        + np.log(kve(1, alpha * q))
        - alpha * q
    )


# ---------------------------------------------------------------------------
# GIG sampling: mode-shifted ratio-of-uniforms, vectorized over parameters.


def _gig_mode(p, a, b):
    return ((p - 1.0) + np.sqrt((p - 1.0) ** 2 + a * b)) / a


def _cubic_roots(c2, c1, c0):
    """Real roots of x^3 + c2 x^2 + c1 x + c0 (vectorized, trig method).

    Returns an array of shape (3,) + c2.shape; for cases with a single real
    root the remaining slots repeat that root.
    """
    c2 = np.asarray(c2, dtype=np.float64)
    pq_p = c1 - c2 * c2 / 3.0
    pq_q = 2.0 * c2**3 / 27.0 - c2 * c1 / 3.0 + c0
    disc = (pq_q / 2.0) ** 2 + (pq_p / 3.0) ** 3
    roots = np.empty((3,) + c2.shape)
    three_real = disc <= 0
    # three real roots: trigonometric form
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.sqrt(np.maximum(-pq_p, 0.0) / 3.0)
        arg = np.clip(3.0 * pq_q / (2.0 * np.where(pq_p < 0, pq_p, -1.0) * r), -1.0, 1.0)
        phi = np.arccos(arg)
        for k in range(3):
            roots[k] = 2.0 * r * np.cos(phi / 3.0 - 2.0 * np.pi * k / 3.0) - c2 / 3.0
    # single real root: Cardano
    if np.any(~three_real):
        sq = np.sqrt(np.maximum(disc, 0.0))
        u3 = -pq_q / 2.0 + sq
        v3 = -pq_q / 2.0 - sq
        real_root = np.cbrt(u3) + np.cbrt(v3) - c2 / 3.0
        for k in range(3):
            roots[k] = np.where(three_real, roots[k], real_root)
    return roots


def gig_sample(params, rng, size=None):
    """Draw from GIG(p, a, b)."""
    out = gig_sample_vector(
        params.p,
        np.full(1 if size is None else size, params.a),
        np.full(1 if size is None else size, params.b),
        rng,
    )
    if size is None:
        return float(out[0])
    return out


def gig_sample_vector(p, a, b, rng, max_iter=1000):
    """Elementwise GIG(p, a_i, b_i) draws with common order parameter p.

    Uses ratio-of-uniforms with shift at the mode; bounds come from the real
    roots of the associated cubic. Acceptance is checked against the density
    normalized at its mode for numerical stability.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a, b = np.broadcast_arrays(a, b)
    shape = a.shape
    a = a.ravel()
    b = b.ravel()
    m = _gig_mode(p, a, b)

    def lg(x):
        # log g(x) - log g(m), g the unnormalized density
        return (p - 1.0) * (np.log(x) - np.log(m)) - 0.5 * (
            a * (x - m) + b * (1.0 / x - 1.0 / m)
        )

    c2 = -(2.0 * (p + 1.0) + a * m) / a
    c1 = -(b - 2.0 * (p - 1.0) * m) / a
    c0 = b * m / a
    roots = _cubic_roots(c2, c1, c0)
    vplus = np.zeros(a.shape)
    vminus = np.zeros(a.shape)
    for k in range(3):
        x = roots[k]
        ok = x > 0
        f = np.where(ok, (x - m) * np.exp(0.5 * lg(np.where(ok, x, 1.0))), 0.0)
        vplus = np.maximum(vplus, f)
        vminus = np.minimum(vminus, f)

    out = np.empty(a.shape)
    todo = np.ones(a.shape, dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(todo)
        if idx.size == 0:
            break
        u = rng.uniform(size=idx.size)
        v = rng.uniform(vminus[idx], vplus[idx])
        x = v / u + m[idx]
        valid = x > 0
        acc = np.zeros(idx.size, dtype=bool)
        if np.any(valid):
            xi = np.where(valid, x, 1.0)
            lgx = (p - 1.0) * (np.log(xi) - np.log(m[idx])) - 0.5 * (
                a[idx] * (xi - m[idx]) + b[idx] * (1.0 / xi - 1.0 / m[idx])
            )
            acc = valid & (2.0 * np.log(u) <= lgx)
        out[idx[acc]] = x[acc]
        todo[idx[acc]] = False
    else:
        raise DistError("GIG rejection sampler failed to converge")
    return out.reshape(shape)


def gig_mean_oracle(p, a, b):
    """Mean of GIG(p, a, b) via Bessel-function identities (test oracle)."""
    omega = np.sqrt(a * b)
    return np.sqrt(b / a) * kv(p + 1, omega) / kv(p, omega)
