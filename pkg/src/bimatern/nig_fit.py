"""Inference for the NIG-driven model.

The marginal likelihood has no closed form, so estimation alternates a Gibbs
sweep over the latent weights w and mixing variances v with a stochastic
gradient step on the working parameters. The gradient is Rao-Blackwellized:
conditional on each v-draw the weights are Gaussian, so their contribution is
integrated out in closed form using the conditional mean and covariance, and
only the mixing variables are sampled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .gaussian import DEFAULT_MIN_POINTS, FitError, FitResult, ModelData, default_init
from .mesh import assemble_fem, projector
from .model import NIG, BivModelParams, build_operator
from .nig import gig_sample_vector, ig_logpdf
from .noise import GENERAL, NuggetParams, nugget_logdet, nugget_precision
from .sparse import spd_factorize
from .working import from_working, to_working


@dataclass
class GibbsState:
    """State of one replicate's Gibbs chain.

    Holds the current weights w and mixing variances v (both length 2n) plus
    the conditional mean and precision factor used for the last w-update.
    """

    w: np.ndarray
    v: np.ndarray
    xi_hat: np.ndarray
    qhat_factor: object

    def __post_init__(self):
        if np.any(self.v <= 0):
            raise FitError("mixing variances must be strictly positive")


@dataclass
class SgdOptions:
    """Settings for the multi-chain stochastic gradient fit.

    The step schedule lam0 * (1 + i/offset)^(-decay) with decay in (0.5, 1]
    is square-summable but not summable, as required for convergence.
    """

    chains: int = 4
    iterations: int = 10_000
    gibbs_samples: int = 1
    step0: float = 0.05
    step_offset: float = 1000.0
    step_decay: float = 0.6
    checkpoint_every: int = 200
    seed: int = 0
    divergence_bound: float = 30.0
    min_points: int = DEFAULT_MIN_POINTS
    enforce_min_points: bool = True
    rms_decay: float = 0.9
    rms_clip: tuple = (1e-3, 1e3)
    fd_step: float = 1e-4

    def __post_init__(self):
        if not 0.5 < self.step_decay <= 1.0:
            raise FitError("step decay exponent must lie in (0.5, 1]")
        if self.chains < 1 or self.iterations < 1 or self.gibbs_samples < 1:
            raise FitError("chains, iterations and gibbs_samples must be >= 1")

    def step_size(self, i):
        return self.step0 * (1.0 + i / self.step_offset) ** (-self.step_decay)


def _mixture_vectors(params, n):
    """Per-component skewness and tail vectors (field 1 nodes then field 2)."""
    mu_vec = np.concatenate([np.full(n, params.mu1), np.full(n, params.mu2)])
    eta_vec = np.concatenate([np.full(n, params.eta1), np.full(n, params.eta2)])
    return mu_vec, eta_vec


def conditional_moments(op, params, nugget, design, v):
    """Gaussian conditional of w given v and the data.

    Precision Qhat = K^T diag(v)^{-1} K + A^T Q_eps A; mean solves
    Qhat xi = A^T Q_eps y + K^T diag(v)^{-1} mu (v - h).
    """
    q_eps = nugget_precision(nugget, design.layout)
    dv_inv = 1.0 / v
    ktd = op.K.T @ sp.diags(dv_inv)
    qhat = ktd @ op.K + design.A.T @ q_eps @ design.A
    qhat = ((qhat + qhat.T) * 0.5).tocsc()
    factor = spd_factorize(qhat)
    mu_vec, _ = _mixture_vectors(params, op.n)
    b = design.A.T @ (q_eps @ design.y) + ktd @ (mu_vec * (v - op.h2))
    xi = factor.solve(b)
    return xi, factor


def initial_state(op, params, nugget, design):
    """Deterministic start: v at its prior mean h, w at the kriging mean."""
    v = op.h2.copy()
    xi, factor = conditional_moments(op, params, nugget, design, v)
    return GibbsState(w=xi.copy(), v=v, xi_hat=xi, qhat_factor=factor)


def v_conditional_params(params, op, e):
    """GIG(-1, a, b) parameters of each v_i's full conditional given e = K w.

    Combining the inverse-Gaussian prior with the Gaussian driving-noise
    term e_i ~ N(mu (v_i - h_i), v_i) gives a = eta + mu^2 and
    b = eta h_i^2 + (e_i + mu h_i)^2 componentwise.
    """
    mu_vec, eta_vec = _mixture_vectors(params, op.n)
    a_v = eta_vec + mu_vec * mu_vec
    b_v = eta_vec * op.h2 * op.h2 + (e + mu_vec * op.h2) ** 2
    return a_v, b_v


def gibbs_step(state, params, nugget, design, op, rng):
    """One sweep: draw w from its Gaussian conditional, then v componentwise.

    Given the new weights, e = K w decouples and each v_i follows a
    generalized-inverse-Gaussian law with order -1.
    """
    xi, factor = conditional_moments(op, params, nugget, design, state.v)
    z = rng.standard_normal(2 * op.n)
    w = xi + factor.solve_lower_t(z)
    e = op.K @ w
    a_v, b_v = v_conditional_params(params, op, e)
    v_new = gig_sample_vector(-1.0, a_v, b_v, rng)
    return GibbsState(w=w, v=v_new, xi_hat=xi, qhat_factor=factor)


def _trace_q_eps(q_eps, a_dense, a_s):
    """tr(A^T Q_eps A S) evaluated only at the nonzeros of Q_eps."""
    q = q_eps.tocoo()
    return float(np.sum(q.data * np.einsum("ij,ij->i", a_s[q.col], a_dense[q.row])))


def expected_joint_logdensity(params, nugget, moments, fem):
    """E_w[log p(Y, w, v)] with w integrated out under fixed moments.

    moments is a list (over v-draws) of lists (over replicates) of tuples
    (design, v, xi, S) where xi and S are the conditional mean and covariance
    of w computed at the expansion point. Additive constants independent of
    the parameters are dropped.
    """
    op = build_operator(params, fem)
    qx_factor = spd_factorize(op.Qx)
    # |det K| = sqrt(|Q_x| |C|) with C the lumped mass matrix
    logdet_k = 0.5 * (qx_factor.logdet + float(np.sum(np.log(op.h2))))
    mu_vec, eta_vec = _mixture_vectors(params, op.n)
    total = 0.0
    for per_rep in moments:
        for design, v, xi, s in per_rep:
            q_eps = nugget_precision(nugget, design.layout)
            ld_eps = nugget_logdet(nugget, design.layout)
            resid = design.y - design.A @ xi
            a_dense = design.A.toarray()
            a_s = a_dense @ s
            quad_noise = float(resid @ (q_eps @ resid)) + _trace_q_eps(
                q_eps, a_dense, a_s
            )
            d = op.K @ xi - mu_vec * (v - op.h2)
            ks = op.K @ s
            diag_ksk = np.asarray(op.K.multiply(ks).sum(axis=1)).ravel()
            quad_w = float(np.sum((d * d + diag_ksk) / v))
            total += (
                0.5 * ld_eps
                - 0.5 * quad_noise
                + logdet_k
                - 0.5 * float(np.sum(np.log(v)))
                - 0.5 * quad_w
                + float(np.sum(ig_logpdf(v, eta_vec, eta_vec * op.h2 * op.h2)))
            )
    return total / len(moments)


def rb_gradient(v_samples, params, nugget, designs, fem, fd_step=1e-4):
    """Rao-Blackwellized stochastic gradient in working space.

    For each v-draw the Gaussian conditional moments of w are computed at the
    current parameters and held fixed; the gradient is the central finite
    difference of the resulting closed-form expected joint log-density.
    """
    if not v_samples:
        raise FitError("need at least one v-sample")
    op = build_operator(params, fem)
    moments = []
    for vs in v_samples:
        per_rep = []
        for design, v in zip(designs, vs):
            xi, factor = conditional_moments(op, params, nugget, design, v)
            s = factor.solve(np.eye(factor.n))
            per_rep.append((design, v, xi, s))
        moments.append(per_rep)
    x0 = to_working(params, nugget)
    structure = nugget.structure

    def f(x):
        p, ng = from_working(x, NIG, structure)
        return expected_joint_logdensity(p, ng, moments, fem)

    grad = np.empty(len(x0))
    for i in range(len(x0)):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += fd_step
        xm[i] -= fd_step
        grad[i] = (f(xp) - f(xm)) / (2.0 * fd_step)
    return grad


def _run_chain(x0, designs, fem, structure, opts, rng):
    """One SGD chain; returns (final x or None, checkpoints, diverged flag)."""
    params, nugget = from_working(x0, NIG, structure)
    op = build_operator(params, fem)
    states = [initial_state(op, params, nugget, d) for d in designs]
    x = x0.copy()
    ms = np.zeros_like(x)
    checkpoints = []
    for i in range(1, opts.iterations + 1):
        params, nugget = from_working(x, NIG, structure)
        op = build_operator(params, fem)
        v_samples = []
        for _ in range(opts.gibbs_samples):
            states = [
                gibbs_step(st, params, nugget, d, op, rng)
                for st, d in zip(states, designs)
            ]
            v_samples.append([st.v for st in states])
        g = rb_gradient(v_samples, params, nugget, designs, fem, fd_step=opts.fd_step)
        ms = opts.rms_decay * ms + (1.0 - opts.rms_decay) * g * g
        precond = np.clip(np.sqrt(ms), opts.rms_clip[0], opts.rms_clip[1])
        x = x + opts.step_size(i) * g / precond
        if np.any(np.abs(x) > opts.divergence_bound):
            return None, checkpoints, True
        if i % opts.checkpoint_every == 0 or i == opts.iterations:
            checkpoints.append(x.copy())
    return x, checkpoints, False


def default_init_nig(obs, mesh, structure):
    """Gaussian-style neutral start extended with eta = 1, mu = 0."""
    params, nugget = default_init(obs, mesh, structure)
    params = BivModelParams(
        kappa1=params.kappa1, kappa2=params.kappa2,
        sigma1=params.sigma1, sigma2=params.sigma2, rho=params.rho,
        theta=0.0, noise_kind=NIG, eta1=1.0, eta2=1.0, mu1=0.0, mu2=0.0,
    )
    return params, nugget


def fit_nig(obs, mesh, init=None, structure=GENERAL, options=None):
    """Multi-chain stochastic gradient fit of the NIG model.

    The estimate is the across-chain average of the final iterates; the
    across-chain standard deviation at each checkpoint serves as the
    convergence diagnostic. Chains whose working parameters leave the
    divergence bound are dropped and reported in the diagnostics.
    """
    opts = options if options is not None else SgdOptions()
    n1, n2 = obs.counts()
    if opts.enforce_min_points and (n1 < opts.min_points or n2 < opts.min_points):
        raise FitError(
            f"insufficient data: {n1}/{n2} observations per field, "
            f"need {opts.min_points}"
        )
    fem = assemble_fem(mesh)
    data = ModelData.build(obs, mesh, fem=fem)
    if init is None:
        init = default_init_nig(obs, mesh, structure)
    x0 = to_working(init[0], init[1])
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(opts.seed).spawn(opts.chains)]
    finals, traces, diverged = [], [], []
    for c, rng in enumerate(rngs):
        xf, cps, bad = _run_chain(x0, data.designs, fem, structure, opts, rng)
        traces.append(np.array(cps) if cps else np.empty((0, len(x0))))
        if bad:
            diverged.append(c)
        else:
            finals.append(xf)
    if not finals:
        raise FitError("all chains diverged")
    finals = np.array(finals)
    x_hat = finals.mean(axis=0)
    chain_sd = finals.std(axis=0, ddof=1) if len(finals) > 1 else np.zeros_like(x_hat)
    n_cp = min(len(t) for t in traces) if traces else 0
    sd_path = (
        np.array([np.std([t[j] for t in traces], axis=0, ddof=0) for j in range(n_cp)])
        if n_cp and len(traces) > 1
        else np.empty((0, len(x0)))
    )
    params_hat, nugget_hat = from_working(x_hat, NIG, structure)
    return FitResult(
        params_hat=params_hat,
        nugget_hat=nugget_hat,
        loglik=float("nan"),
        iterations=opts.iterations,
        converged=not diverged,
        trace=np.array(traces[0]),
        diagnostics={
            "chain_finals": finals,
            "chain_sd": chain_sd,
            "chain_sd_path": sd_path,
            "diverged_chains": diverged,
            "data": data,
        },
    )


def predict_nig(fit, obs, mesh, new_locations, n_samples=200, seed=0):
    """Monte-Carlo posterior prediction of both latent fields.

    Runs the Gibbs sampler at the fitted parameters, discards a 20% burn-in,
    and Rao-Blackwellizes each draw: the conditional mean A xi and conditional
    variance diag(A Qhat^{-1} A^T) are averaged, and the spread of the
    conditional means across draws is added so the reported variance obeys
    the law of total variance. The conditional-only averages are returned
    under the *_conditional keys.
    """
    params, nugget = fit.params_hat, fit.nugget_hat
    fem = assemble_fem(mesh)
    data = ModelData.build(obs, mesh, fem=fem)
    op = build_operator(params, fem)
    a0 = projector(mesh, new_locations)
    zeros = sp.csc_matrix(a0.shape)
    a_fields = [sp.hstack([a0, zeros], format="csc"), sp.hstack([zeros, a0], format="csc")]
    burn = int(0.2 * n_samples)
    rng = np.random.default_rng(seed)
    out = {k: [] for k in ("mean1", "var1", "mean2", "var2",
                           "var1_conditional", "var2_conditional")}
    for design in data.designs:
        state = initial_state(op, params, nugget, design)
        means = [[], []]
        cond_vars = [[], []]
        for j in range(n_samples):
            state = gibbs_step(state, params, nugget, design, op, rng)
            if j < burn:
                continue
            for k, amat in enumerate(a_fields):
                means[k].append(amat @ state.xi_hat)
                sol = state.qhat_factor.solve(amat.T.toarray())
                cond_vars[k].append(np.asarray(amat.multiply(sol.T).sum(axis=1)).ravel())
        for k, key in enumerate(("1", "2")):
            m = np.array(means[k])
            cv = np.array(cond_vars[k]).mean(axis=0)
            out["mean" + key].append(m.mean(axis=0))
            out["var" + key + "_conditional"].append(cv)
            out["var" + key].append(cv + m.var(axis=0))
    return {k: np.asarray(v) for k, v in out.items()}
