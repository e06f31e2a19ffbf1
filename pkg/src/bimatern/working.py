"""Packing of model and nugget parameters into unconstrained working vectors.

Scale-type parameters (kappa, sigma, sigma_eps, eta) travel on a log scale,
the nugget correlation through a logit-type map, and rho, theta, mu raw.
"""

from __future__ import annotations

import numpy as np

from .model import GAUSSIAN, NIG, BivModelParams
from .noise import GENERAL, NuggetParams, rho_e_from_working, rho_e_to_working


def working_names(noise_kind, structure):
    names = ["log_kappa1", "log_kappa2", "log_sigma1", "log_sigma2", "rho"]
    if noise_kind == NIG:
        names.append("theta")
    names += ["log_sigma_e1", "log_sigma_e2"]
    if structure == GENERAL:
        names.append("t_rho_e")
    if noise_kind == NIG:
        names += ["log_eta1", "log_eta2", "mu1", "mu2"]
    return names


def to_working(params, nugget):
    """Map a (BivModelParams, NuggetParams) pair to a working vector."""
    vec = [
        np.log(params.kappa1),
        np.log(params.kappa2),
        np.log(params.sigma1),
        np.log(params.sigma2),
        params.rho,
    ]
    if params.noise_kind == NIG:
        vec.append(params.theta)
    vec += [np.log(nugget.sigma_e1), np.log(nugget.sigma_e2)]
    if nugget.structure == GENERAL:
        vec.append(rho_e_to_working(nugget.rho_e))
    if params.noise_kind == NIG:
        vec += [np.log(params.eta1), np.log(params.eta2), params.mu1, params.mu2]
    return np.asarray(vec, dtype=np.float64)


def from_working(vec, noise_kind, structure):
    """Inverse of to_working; round-trips within floating-point accuracy."""
    vec = np.asarray(vec, dtype=np.float64)
    i = 0
    kappa1, kappa2, sigma1, sigma2 = np.exp(vec[0:4])
    rho = vec[4]
    i = 5
    theta = 0.0
    if noise_kind == NIG:
        theta = vec[i]
        i += 1
    sigma_e1, sigma_e2 = np.exp(vec[i : i + 2])
    i += 2
    rho_e = 0.0
    if structure == GENERAL:
        rho_e = rho_e_from_working(vec[i])
        i += 1
    eta1 = eta2 = 1.0
    mu1 = mu2 = 0.0
    if noise_kind == NIG:
        eta1, eta2 = np.exp(vec[i : i + 2])
        mu1, mu2 = vec[i + 2 : i + 4]
        i += 4
    if i != len(vec):
        raise ValueError(f"working vector has length {len(vec)}, expected {i}")
    params = BivModelParams(
        kappa1=kappa1, kappa2=kappa2, sigma1=sigma1, sigma2=sigma2, rho=rho,
        theta=theta, noise_kind=noise_kind, eta1=eta1, eta2=eta2, mu1=mu1, mu2=mu2,
    )
    nugget = NuggetParams(
        sigma_e1=sigma_e1, sigma_e2=sigma_e2, rho_e=rho_e, structure=structure
    )
    return params, nugget
