"""Exact marginal likelihood, maximum-likelihood fitting and kriging
prediction for the Gaussian bivariate model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize

from . import mesh as mesh_mod
from .mesh import assemble_fem
from .model import GAUSSIAN, BivModelParams, build_operator
from .noise import GENERAL, NuggetParams, nugget_logdet, nugget_precision
from .sparse import NotPositiveDefinite, block_diag, spd_factorize
from .working import from_working, to_working

DEFAULT_MIN_POINTS = 100


class FitError(Exception):
    pass


@dataclass
class ReplicateDesign:
    """Parameter-independent per-replicate quantities."""

    A: sp.csc_matrix
    layout: object
    y: np.ndarray
    B: sp.csc_matrix | None = None  # covariate design, optional


@dataclass
class ModelData:
    """Observations bound to a mesh: projectors, layouts and FEM matrices."""

    mesh: object
    fem: object
    designs: list

    @classmethod
    def build(cls, obs, mesh, fem=None, covariates=None):
        fem = fem if fem is not None else assemble_fem(mesh)
        designs = []
        for k, rep in enumerate(obs.replicates):
            a1 = mesh_mod.projector(mesh, rep.f1.loc)
            a2 = mesh_mod.projector(mesh, rep.f2.loc)
            a = block_diag([a1, a2])
            b = None
            if covariates is not None:
                b = sp.csc_matrix(covariates[k])
            designs.append(ReplicateDesign(A=a, layout=rep.layout(), y=rep.y, B=b))
        return cls(mesh=mesh, fem=fem, designs=designs)

    @property
    def n_obs_total(self):
        return sum(len(d.y) for d in self.designs)


@dataclass
class FitResult:
    params_hat: BivModelParams
    nugget_hat: NuggetParams
    loglik: float
    iterations: int
    converged: bool
    trace: np.ndarray
    std_errors: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


def _replicate_loglik(op, qx_factor, design, q_eps, ld_eps):
    """Marginal log-likelihood contribution of one replicate."""
    a = design.A
    y = design.y
    n = len(y)
    at_qe = a.T @ q_eps
    q_post = (op.Qx + at_qe @ a).tocsc()
    q_post = ((q_post + q_post.T) * 0.5).tocsc()
    post_factor = spd_factorize(q_post)
    mu = post_factor.solve(at_qe @ y)
    resid = y - a @ mu
    val = (
        0.5 * qx_factor.logdet
        + 0.5 * ld_eps
        - 0.5 * post_factor.logdet
        - 0.5 * float(mu @ (op.Qx @ mu))
        - 0.5 * float(resid @ (q_eps @ resid))
        - 0.5 * n * np.log(2.0 * np.pi)
    )
    return val, mu, post_factor


def loglik_gauss(params, nugget, data):
    """Exact Gaussian marginal log-likelihood summed over replicates."""
    op = build_operator(params, data.fem)
    qx_factor = spd_factorize(op.Qx)
    total = 0.0
    for design in data.designs:
        q_eps = nugget_precision(nugget, design.layout)
        ld_eps = nugget_logdet(nugget, design.layout)
        val, _, _ = _replicate_loglik(op, qx_factor, design, q_eps, ld_eps)
        total += val
    return total


def profile_beta(params, nugget, data):
    """GLS regression coefficients profiled at fixed covariance parameters.

    Uses the Woodbury form Sigma_y^{-1} = Q_eps - Q_eps A Q_{x|y}^{-1} A^T
    Q_eps so that only sparse factorizations are needed.
    """
    op = build_operator(params, data.fem)
    btb = None
    bty = None
    for design in data.designs:
        if design.B is None:
            raise FitError("no covariates supplied")
        q_eps = nugget_precision(nugget, design.layout)
        a = design.A
        q_post = (op.Qx + a.T @ q_eps @ a).tocsc()
        factor = spd_factorize(((q_post + q_post.T) * 0.5).tocsc())

        def siginv(m):
            m = np.asarray(m if m.ndim > 1 else m[:, None], dtype=np.float64)
            qm = q_eps @ m
            return qm - q_eps @ (a @ factor.solve(a.T @ qm))

        bd = design.B.toarray()
        sb = siginv(bd)
        w = bd.T @ sb
        v = bd.T @ siginv(design.y[:, None])[:, 0]
        btb = w if btb is None else btb + w
        bty = v if bty is None else bty + v
    return np.linalg.solve(btb, bty)


def fit_gauss(obs, mesh, init=None, structure=GENERAL, options=None):
    """Maximize the Gaussian marginal likelihood in working space.

    init may be a (BivModelParams, NuggetParams) pair; otherwise a
    scale-aware neutral start is derived from the data.
    """
    opts = dict(min_points=DEFAULT_MIN_POINTS, max_iter=500, gtol=1e-5,
                enforce_min_points=True)
    if options:
        opts.update(options)
    n1, n2 = obs.counts()
    if opts["enforce_min_points"] and (n1 < opts["min_points"] or n2 < opts["min_points"]):
        raise FitError(
            f"insufficient data: {n1}/{n2} observations per field, "
            f"need {opts['min_points']}"
        )
    data = ModelData.build(obs, mesh)
    if init is None:
        init = default_init(obs, mesh, structure)
    params0, nugget0 = init
    x0 = to_working(params0, nugget0)
    trace = []

    def objective(x):
        params, nugget = from_working(x, GAUSSIAN, structure)
        try:
            return -loglik_gauss(params, nugget, data)
        except NotPositiveDefinite:
            return 1e12

    def cb(x):
        trace.append(np.array(x))

    res = minimize(
        objective,
        x0,
        method="BFGS",
        jac="3-point",
        callback=cb,
        options={"gtol": opts["gtol"], "maxiter": opts["max_iter"]},
    )
    params_hat, nugget_hat = from_working(res.x, GAUSSIAN, structure)
    return FitResult(
        params_hat=params_hat,
        nugget_hat=nugget_hat,
        loglik=-float(res.fun),
        iterations=int(res.nit),
        converged=bool(res.success),
        trace=np.array(trace) if trace else np.empty((0, len(x0))),
        diagnostics={"message": res.message, "data": data},
    )


def default_init(obs, mesh, structure):
    """Scale-aware neutral starting point.

    sigma from empirical standard deviations, kappa so the correlation range
    sqrt(8)/kappa is a quarter of the domain diameter, rho = 0 and
    sigma_eps = 0.1 sigma.
    """
    y1 = np.concatenate([r.f1.value for r in obs.replicates])
    y2 = np.concatenate([r.f2.value for r in obs.replicates])
    s1 = max(float(np.std(y1)), 1e-3)
    s2 = max(float(np.std(y2)), 1e-3)
    extent = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
    diam = float(np.hypot(*extent))
    kappa = np.sqrt(8.0) / (0.25 * diam)
    params = BivModelParams(kappa1=kappa, kappa2=kappa, sigma1=s1, sigma2=s2, rho=0.0)
    nugget = NuggetParams(sigma_e1=0.1 * s1, sigma_e2=0.1 * s2, rho_e=0.0,
                          structure=structure)
    return params, nugget


def posterior_state(params, nugget, data):
    """Per-replicate posterior mean and precision factor of the weights."""
    op = build_operator(params, data.fem)
    qx_factor = spd_factorize(op.Qx)
    states = []
    for design in data.designs:
        q_eps = nugget_precision(nugget, design.layout)
        ld_eps = nugget_logdet(nugget, design.layout)
        _, mu, factor = _replicate_loglik(op, qx_factor, design, q_eps, ld_eps)
        states.append((mu, factor))
    return op, states


def predict_gauss(fit, obs, mesh, new_locations):
    """Posterior mean and variance of both latent fields at new locations.

    Returns dict with arrays of shape (n_replicates, n_locations) under keys
    "mean1", "var1", "mean2", "var2".
    """
    data = fit.diagnostics.get("data")
    if data is None or data.mesh is not mesh:
        data = ModelData.build(obs, mesh)
    op, states = posterior_state(fit.params_hat, fit.nugget_hat, data)
    a0 = mesh_mod.projector(mesh, new_locations)
    n = op.n
    a_full1 = sp.hstack([a0, sp.csc_matrix(a0.shape)], format="csc")
    a_full2 = sp.hstack([sp.csc_matrix(a0.shape), a0], format="csc")
    out = {k: [] for k in ("mean1", "var1", "mean2", "var2")}
    for mu, factor in states:
        for key, amat in (("1", a_full1), ("2", a_full2)):
            mean = amat @ mu
            sol = factor.solve(amat.T.toarray())
            var = np.asarray(amat.multiply(sol.T).sum(axis=1)).ravel()
            out["mean" + key].append(mean)
            out["var" + key].append(var)
    return {k: np.asarray(v) for k, v in out.items()}
