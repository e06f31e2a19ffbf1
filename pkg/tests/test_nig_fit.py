import numpy as np
import pytest
from scipy.special import kv
from scipy.stats import norm

from bimatern.gaussian import ModelData, loglik_gauss, predict_gauss
from bimatern.mesh import assemble_fem, make_rect_mesh
from bimatern.model import GAUSSIAN, NIG, BivModelParams, build_operator
from bimatern.nig import ig_logpdf
from bimatern.nig_fit import (
    FitError,
    SgdOptions,
    conditional_moments,
    default_init_nig,
    expected_joint_logdensity,
    fit_nig,
    gibbs_step,
    initial_state,
    predict_nig,
    rb_gradient,
)
from bimatern.noise import DIAGONAL, GENERAL, NuggetParams
from bimatern.simulate import simulate_dataset
from bimatern.working import from_working, to_working


def make_case(seed=0, n_obs=20, n_rep=1, noise_kind=NIG, eta=1.0, mu=0.5,
              rho=0.4, rho_e=0.3):
    mesh = make_rect_mesh((0, 2), (0, 2), 4, 4)
    fem = assemble_fem(mesh)
    params = BivModelParams(
        kappa1=1.5, kappa2=2.0, sigma1=1.0, sigma2=0.8, rho=rho,
        noise_kind=noise_kind, eta1=eta, eta2=eta, mu1=mu, mu2=-mu,
    )
    structure = GENERAL if rho_e else DIAGONAL
    nugget = NuggetParams(sigma_e1=0.3, sigma_e2=0.3, rho_e=rho_e, structure=structure)
    op = build_operator(params, fem)
    obs = simulate_dataset(mesh, op, params, nugget, n_obs, n_rep,
                           np.random.default_rng(seed))
    data = ModelData.build(obs, mesh, fem=fem)
    return mesh, fem, params, nugget, op, obs, data


def gaussian_twin(params):
    return BivModelParams(
        kappa1=params.kappa1, kappa2=params.kappa2, sigma1=params.sigma1,
        sigma2=params.sigma2, rho=params.rho, noise_kind=GAUSSIAN,
    )


def test_conditional_mean_matches_gaussian_kriging():
    # v pinned at its prior mean with mu = 0 recovers the Gaussian posterior
    mesh, fem, params, nugget, op, obs, data = make_case(mu=0.0)
    design = data.designs[0]
    xi, factor = conditional_moments(op, params, nugget, design, op.h2)

    gparams = gaussian_twin(params)
    gop = build_operator(gparams, fem)
    from bimatern.noise import nugget_precision
    from bimatern.sparse import spd_factorize

    q_eps = nugget_precision(nugget, design.layout)
    q_post = (gop.Qx + design.A.T @ q_eps @ design.A).tocsc()
    gfactor = spd_factorize(((q_post + q_post.T) * 0.5).tocsc())
    mu_post = gfactor.solve(design.A.T @ (q_eps @ design.y))
    assert xi == pytest.approx(mu_post, abs=1e-8)
    # and the conditional precision agrees too
    s1 = factor.solve(np.eye(factor.n))
    s2 = gfactor.solve(np.eye(gfactor.n))
    assert np.abs(s1 - s2).max() < 1e-8


def test_gibbs_reproducible():
    mesh, fem, params, nugget, op, obs, data = make_case()
    design = data.designs[0]
    outs = []
    for _ in range(2):
        rng = np.random.default_rng(42)
        st = initial_state(op, params, nugget, design)
        for _ in range(5):
            st = gibbs_step(st, params, nugget, design, op, rng)
        outs.append((st.w.copy(), st.v.copy()))
    assert np.array_equal(outs[0][0], outs[1][0])
    assert np.array_equal(outs[0][1], outs[1][1])


def test_gibbs_state_positivity_enforced():
    mesh, fem, params, nugget, op, obs, data = make_case()
    design = data.designs[0]
    rng = np.random.default_rng(0)
    st = initial_state(op, params, nugget, design)
    for _ in range(20):
        st = gibbs_step(st, params, nugget, design, op, rng)
        assert np.all(st.v > 0)


def test_gibbs_gaussian_limit_time_average():
    # enormous eta freezes v at h, so the chain mean is the kriging mean
    mesh, fem, params, nugget, op, obs, data = make_case(eta=1e6, mu=0.0, seed=3)
    design = data.designs[0]
    rng = np.random.default_rng(1)
    st = initial_state(op, params, nugget, design)
    target = st.xi_hat.copy()
    draws = []
    for _ in range(400):
        st = gibbs_step(st, params, nugget, design, op, rng)
        draws.append(st.w)
    draws = np.array(draws)
    se = draws.std(axis=0) / np.sqrt(len(draws))
    err = np.abs(draws.mean(axis=0) - target)
    # MCMC autocorrelation inflates the naive SE, allow generous slack
    assert np.all(err < 6 * se + 1e-3)


def gig_grid_moments(eta, h, mu, e):
    """Brute-force grid posterior of one mixing variance (oracle)."""
    grid = np.linspace(1e-6, 30 * h, 4000)
    logw = ig_logpdf(grid, eta, eta * h * h) + norm.logpdf(
        e, loc=mu * (grid - h), scale=np.sqrt(grid)
    )
    w = np.exp(logw - logw.max())
    w /= w.sum()
    m = float(np.sum(w * grid))
    return m, float(np.sum(w * grid * grid) - m * m)


def test_v_conditional_matches_grid_posterior():
    rng = np.random.default_rng(7)
    for _ in range(10):
        eta = rng.uniform(0.3, 3.0)
        h = rng.uniform(0.05, 0.5)
        mu = rng.normal(scale=1.0)
        e = rng.normal(scale=np.sqrt(h))
        a = eta + mu * mu
        b = eta * h * h + (e + mu * h) ** 2
        omega = np.sqrt(a * b)
        scale = np.sqrt(b / a)
        mean = scale * kv(0.0, omega) / kv(-1.0, omega)
        second = (b / a) * kv(1.0, omega) / kv(-1.0, omega)
        var = second - mean * mean
        gm, gv = gig_grid_moments(eta, h, mu, e)
        assert mean == pytest.approx(gm, rel=0.02)
        assert var == pytest.approx(gv, rel=0.05, abs=1e-8)


def test_rb_gradient_gaussian_limit_matches_fd():
    # at eta = 1e6, mu = 0 the model is Gaussian and v is glued to h, so the
    # RB gradient must reproduce finite differences of the exact Gaussian
    # marginal likelihood in the shared coordinates
    mesh, fem, params, nugget, op, obs, data = make_case(eta=1e6, mu=0.0, seed=5)
    v_samples = [[op.h2.copy() for _ in data.designs]]
    g = rb_gradient(v_samples, params, nugget, data.designs, fem)

    gparams = gaussian_twin(params)
    x0 = to_working(gparams, nugget)
    eps = 1e-5

    def gauss_ll(x):
        p, ng = from_working(x, GAUSSIAN, GENERAL)
        return loglik_gauss(p, ng, data)

    fd = np.empty(len(x0))
    for i in range(len(x0)):
        xp, xm = x0.copy(), x0.copy()
        xp[i] += eps
        xm[i] -= eps
        fd[i] = (gauss_ll(xp) - gauss_ll(xm)) / (2 * eps)
    # shared coordinates: kappa/sigma/rho then nugget scales and correlation
    nig_idx = [0, 1, 2, 3, 4, 6, 7, 8]
    scale = np.abs(fd).max()
    assert g[nig_idx] == pytest.approx(fd, abs=2e-3 * scale)


def test_rb_gradient_variance_not_larger_than_naive():
    mesh, fem, params, nugget, op, obs, data = make_case(seed=6)
    design = data.designs[0]
    rng = np.random.default_rng(2)
    st = initial_state(op, params, nugget, design)
    for _ in range(20):
        st = gibbs_step(st, params, nugget, design, op, rng)
    x0 = to_working(params, nugget)
    eps = 1e-4
    rb, naive = [], []
    n2 = 2 * op.n
    for _ in range(60):
        st = gibbs_step(st, params, nugget, design, op, rng)
        rb.append(rb_gradient([[st.v]], params, nugget, [design], fem))
        # naive estimator: same formula but with the sampled w plugged in
        moments = [[(design, st.v, st.w, np.zeros((n2, n2)))]]

        def joint(x):
            p, ng = from_working(x, NIG, GENERAL)
            return expected_joint_logdensity(p, ng, moments, fem)

        gi = np.empty(len(x0))
        for i in range(len(x0)):
            xp, xm = x0.copy(), x0.copy()
            xp[i] += eps
            xm[i] -= eps
            gi[i] = (joint(xp) - joint(xm)) / (2 * eps)
        naive.append(gi)
    var_rb = np.var(np.array(rb), axis=0)
    var_naive = np.var(np.array(naive), axis=0)
    assert np.all(var_rb <= var_naive * 1.05 + 1e-10)


def test_rb_gradient_empty_samples_rejected():
    mesh, fem, params, nugget, op, obs, data = make_case()
    with pytest.raises(FitError):
        rb_gradient([], params, nugget, data.designs, fem)


def test_sgd_options_validation():
    with pytest.raises(FitError):
        SgdOptions(step_decay=0.4)
    with pytest.raises(FitError):
        SgdOptions(chains=0)
    opts = SgdOptions()
    assert opts.step_size(0) == pytest.approx(opts.step0)
    # square-summable but not summable schedule decays monotonically
    assert opts.step_size(1000) < opts.step_size(10)


def test_fit_nig_same_seed_identical():
    mesh, fem, params, nugget, op, obs, data = make_case(seed=8, n_obs=25)
    opts = SgdOptions(chains=2, iterations=4, checkpoint_every=2, seed=11,
                      enforce_min_points=False)
    f1 = fit_nig(obs, mesh, structure=GENERAL, options=opts)
    f2 = fit_nig(obs, mesh, structure=GENERAL, options=opts)
    assert np.array_equal(f1.diagnostics["chain_finals"], f2.diagnostics["chain_finals"])


def test_fit_nig_divergence_guard():
    mesh, fem, params, nugget, op, obs, data = make_case(seed=9, n_obs=25)
    opts = SgdOptions(chains=1, iterations=3, step0=1e6, rms_clip=(1e-3, 1e-3),
                      enforce_min_points=False, seed=1)
    with pytest.raises(FitError, match="diverged"):
        fit_nig(obs, mesh, structure=GENERAL, options=opts)


def test_fit_nig_min_points():
    mesh, fem, params, nugget, op, obs, data = make_case(n_obs=10)
    with pytest.raises(FitError, match="insufficient"):
        fit_nig(obs, mesh)


def test_fit_nig_smoke_reasonable_output():
    mesh, fem, params, nugget, op, obs, data = make_case(seed=10, n_obs=30, n_rep=2)
    opts = SgdOptions(chains=2, iterations=6, checkpoint_every=3, seed=3,
                      enforce_min_points=False)
    fit = fit_nig(obs, mesh, structure=GENERAL, options=opts)
    assert fit.converged
    assert fit.params_hat.kappa1 > 0
    assert fit.params_hat.eta1 > 0
    assert fit.diagnostics["chain_sd"].shape == (13,)
    assert fit.diagnostics["chain_sd_path"].shape[0] == 2


def test_predict_nig_gaussian_limit_matches_kriging():
    mesh, fem, params, nugget, op, obs, data = make_case(eta=1e6, mu=0.0, seed=12)
    from bimatern.gaussian import FitResult

    nfit = FitResult(params_hat=params, nugget_hat=nugget, loglik=0.0,
                     iterations=0, converged=True, trace=np.empty((0, 13)))
    gfit = FitResult(params_hat=gaussian_twin(params), nugget_hat=nugget,
                     loglik=0.0, iterations=0, converged=True,
                     trace=np.empty((0, 8)))
    pts = np.array([[0.5, 0.5], [1.5, 1.0], [0.7, 1.8]])
    pn = predict_nig(nfit, obs, mesh, pts, n_samples=300, seed=4)
    pg = predict_gauss(gfit, obs, mesh, pts)
    for k in ("mean1", "mean2"):
        assert pn[k] == pytest.approx(pg[k], abs=0.1)
    for k in ("var1", "var2"):
        # total variance approaches the Gaussian kriging variance; the
        # conditional part alone must not exceed it
        assert pn[k] == pytest.approx(pg[k], rel=0.25, abs=0.02)
        assert np.all(pn[k + "_conditional"] <= pn[k] + 1e-12)
