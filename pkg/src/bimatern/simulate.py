"""Exact simulation of latent weights and noisy bivariate observations."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import mesh as mesh_mod
from .data import FieldObs, ObservationSet, Replicate
from .model import GAUSSIAN
from .nig import ig_sample_vector
from .noise import layout_from_locations


class SimulationError(Exception):
    pass


def sim_gauss_weights(op, rng):
    """Draw Gaussian stochastic weights w = K^{-1} diag(sqrt(h2)) z."""
    z = rng.standard_normal(2 * op.n)
    rhs = np.sqrt(op.h2) * z
    try:
        lu = splu(op.K.tocsc())
    except RuntimeError as exc:
        raise SimulationError("operator matrix K is singular") from exc
    return lu.solve(rhs)


def sim_nig_weights(op, params, rng):
    """Draw NIG weights and their mixing variances.

    v_{k,i} ~ IG(eta_k, eta_k h_i^2) independently, then w given v is
    Gaussian with mean K^{-1} [mu_1 (v_1 - h); mu_2 (v_2 - h)] and
    covariance K^{-1} diag(v) K^{-T}.
    """
    h = op.h2[: op.n]
    v1 = ig_sample_vector(params.eta1, params.eta1 * h * h, rng)
    v2 = ig_sample_vector(params.eta2, params.eta2 * h * h, rng)
    v = np.concatenate([v1, v2])
    shift = np.concatenate([params.mu1 * (v1 - h), params.mu2 * (v2 - h)])
    z = rng.standard_normal(2 * op.n)
    rhs = shift + np.sqrt(v) * z
    lu = splu(op.K.tocsc())
    w = lu.solve(rhs)
    return w, v


def sim_weights(op, params, rng):
    """Dispatch on the model's driving-noise kind."""
    if params.noise_kind == GAUSSIAN:
        return sim_gauss_weights(op, rng), None
    return sim_nig_weights(op, params, rng)


def sim_nugget(nugget, layout, rng):
    """Draw correlated nugget noise for the given co-location layout."""
    m = layout.n_total
    eps = np.empty(m)
    s1, s2, r = nugget.sigma_e1, nugget.sigma_e2, nugget.rho_e
    z = rng.standard_normal(m)
    done = np.zeros(m, dtype=bool)
    for i in range(m):
        if done[i]:
            continue
        j = layout.pair_index[i]
        if j < 0:
            eps[i] = (s1 if i < layout.n1 else s2) * z[i]
            done[i] = True
        else:
            # i is a field-1 row, j its field-2 partner (or vice versa)
            a, b = (i, j) if i < layout.n1 else (j, i)
            eps[a] = s1 * z[a]
            eps[b] = s2 * (r * z[a] + np.sqrt(1.0 - r * r) * z[b])
            done[a] = done[b] = True
    return eps


def sim_observations(w, mesh, loc1, loc2, nugget, rng, mean1=None, mean2=None):
    """Observe the latent field at given locations with correlated nugget noise.

    Returns a Replicate with Y = m + A w + eps.
    """
    n = mesh.n_vertices
    a1 = mesh_mod.projector(mesh, loc1)
    a2 = mesh_mod.projector(mesh, loc2)
    x1 = a1 @ w[:n]
    x2 = a2 @ w[n:]
    if mean1 is not None:
        x1 = x1 + mean1
    if mean2 is not None:
        x2 = x2 + mean2
    layout = layout_from_locations(loc1, loc2)
    eps = sim_nugget(nugget, layout, rng)
    y1 = x1 + eps[: layout.n1]
    y2 = x2 + eps[layout.n1 :]
    return Replicate(f1=FieldObs(loc=loc1, value=y1), f2=FieldObs(loc=loc2, value=y2))


def uniform_locations(mesh, n, rng, margin=0.0, colocated=True):
    """Uniform observation sites over the mesh bounding box interior.

    With colocated=True both fields share the same n sites (a shared-sensor
    design); otherwise two independent site sets are drawn.
    """
    lo = mesh.vertices.min(axis=0) + margin
    hi = mesh.vertices.max(axis=0) - margin
    loc1 = rng.uniform(lo, hi, size=(n, 2))
    if colocated:
        return loc1, loc1.copy()
    loc2 = rng.uniform(lo, hi, size=(n, 2))
    return loc1, loc2


def simulate_dataset(mesh, op, params, nugget, n_obs, n_replicates, rng,
                     margin=0.0, colocated=True):
    """Generate a full ObservationSet of independent replicates."""
    reps = []
    for _ in range(n_replicates):
        w, _v = sim_weights(op, params, rng)
        loc1, loc2 = uniform_locations(mesh, n_obs, rng, margin=margin, colocated=colocated)
        reps.append(sim_observations(w, mesh, loc1, loc2, nugget, rng))
    return ObservationSet(replicates=reps)
