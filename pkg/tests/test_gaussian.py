import numpy as np
import pytest
import scipy.sparse as sp

from bimatern.data import FieldObs, ObservationSet, Replicate
from bimatern.gaussian import (
    FitError,
    FitResult,
    ModelData,
    default_init,
    fit_gauss,
    loglik_gauss,
    predict_gauss,
    profile_beta,
)
from bimatern.mesh import assemble_fem, make_rect_mesh, projector
from bimatern.model import BivModelParams, build_operator
from bimatern.noise import DIAGONAL, GENERAL, NuggetParams, nugget_covariance
from bimatern.simulate import simulate_dataset


def dense_marginal_cov(params, nugget, data):
    """Dense observation covariance A Q_x^{-1} A^T + Sigma_eps (oracle)."""
    op = build_operator(params, data.fem)
    qx_inv = np.linalg.inv(op.Qx.toarray())
    blocks = []
    for design in data.designs:
        a = design.A.toarray()
        blocks.append(a @ qx_inv @ a.T + nugget_covariance(nugget, design.layout))
    return blocks


def dense_loglik(params, nugget, data):
    total = 0.0
    for design, cov in zip(data.designs, dense_marginal_cov(params, nugget, data)):
        y = design.y
        n = len(y)
        sign, ld = np.linalg.slogdet(cov)
        assert sign > 0
        total += -0.5 * (ld + y @ np.linalg.solve(cov, y) + n * np.log(2 * np.pi))
    return total


def tiny_dataset(seed=0, n_obs=15, n_rep=1, rho_e=0.4, colocated=True):
    mesh = make_rect_mesh((0, 2), (0, 2), 5, 5)
    params = BivModelParams(kappa1=1.5, kappa2=2.5, sigma1=1.0, sigma2=0.7, rho=0.5)
    structure = GENERAL if rho_e else DIAGONAL
    nugget = NuggetParams(sigma_e1=0.4, sigma_e2=0.3, rho_e=rho_e, structure=structure)
    op = build_operator(params, mesh and assemble_fem(mesh))
    obs = simulate_dataset(mesh, op, params, nugget, n_obs, n_rep,
                           np.random.default_rng(seed), colocated=colocated)
    return mesh, params, nugget, obs


def test_loglik_matches_dense_oracle():
    mesh, params, nugget, obs = tiny_dataset()
    data = ModelData.build(obs, mesh)
    got = loglik_gauss(params, nugget, data)
    expect = dense_loglik(params, nugget, data)
    assert got == pytest.approx(expect, abs=1e-8)


def test_loglik_matches_dense_oracle_non_colocated():
    mesh, params, nugget, obs = tiny_dataset(seed=4, rho_e=0.0, colocated=False)
    data = ModelData.build(obs, mesh)
    assert loglik_gauss(params, nugget, data) == pytest.approx(
        dense_loglik(params, nugget, data), abs=1e-8
    )


def test_loglik_matches_dense_oracle_other_params():
    mesh, _, _, obs = tiny_dataset(seed=1)
    data = ModelData.build(obs, mesh)
    params = BivModelParams(kappa1=0.8, kappa2=0.8, sigma1=2.0, sigma2=2.0, rho=-0.9)
    nugget = NuggetParams(sigma_e1=0.2, sigma_e2=0.9, rho_e=-0.7, structure=GENERAL)
    assert loglik_gauss(params, nugget, data) == pytest.approx(
        dense_loglik(params, nugget, data), abs=1e-8
    )


def test_loglik_sums_over_replicates():
    mesh, params, nugget, obs = tiny_dataset(seed=2, n_rep=3)
    data = ModelData.build(obs, mesh)
    total = loglik_gauss(params, nugget, data)
    parts = 0.0
    for rep in obs.replicates:
        sub = ObservationSet(replicates=[rep])
        parts += loglik_gauss(params, nugget, ModelData.build(sub, mesh))
    assert total == pytest.approx(parts, rel=1e-12)


def test_predict_matches_dense_conditioning():
    mesh, params, nugget, obs = tiny_dataset(seed=3)
    data = ModelData.build(obs, mesh)
    new_loc = np.array([[0.4, 0.9], [1.6, 0.2], [1.0, 1.0]])
    fit = FitResult(params_hat=params, nugget_hat=nugget, loglik=0.0,
                    iterations=0, converged=True, trace=np.empty((0, 8)))
    pred = predict_gauss(fit, obs, mesh, new_loc)

    op = build_operator(params, data.fem)
    qx_inv = np.linalg.inv(op.Qx.toarray())
    design = data.designs[0]
    a = design.A.toarray()
    a0 = projector(mesh, new_loc).toarray()
    n = op.n
    a_new = np.block([
        [a0, np.zeros_like(a0)],
        [np.zeros_like(a0), a0],
    ])
    c_yy = a @ qx_inv @ a.T + nugget_covariance(nugget, design.layout)
    c_ny = a_new @ qx_inv @ a.T
    c_nn = a_new @ qx_inv @ a_new.T
    mean = c_ny @ np.linalg.solve(c_yy, design.y)
    var = np.diag(c_nn - c_ny @ np.linalg.solve(c_yy, c_ny.T))
    assert pred["mean1"][0] == pytest.approx(mean[:3], abs=1e-8)
    assert pred["mean2"][0] == pytest.approx(mean[3:], abs=1e-8)
    assert pred["var1"][0] == pytest.approx(var[:3], abs=1e-8)
    assert pred["var2"][0] == pytest.approx(var[3:], abs=1e-8)


def test_predict_variance_positive_and_mean_interpolates_smoothly():
    mesh, params, nugget, obs = tiny_dataset(seed=5, n_obs=25)
    fit = FitResult(params_hat=params, nugget_hat=nugget, loglik=0.0,
                    iterations=0, converged=True, trace=np.empty((0, 8)))
    rng = np.random.default_rng(0)
    pts = rng.uniform(0.1, 1.9, size=(40, 2))
    pred = predict_gauss(fit, obs, mesh, pts)
    assert np.all(pred["var1"] > 0)
    assert np.all(pred["var2"] > 0)


def test_profile_beta_recovers_fixed_effects():
    mesh, params, nugget, obs = tiny_dataset(seed=6, n_obs=25, n_rep=25)
    beta_true = np.array([2.0, -1.5])
    covs = []
    for rep in obs.replicates:
        b = np.zeros((rep.n1 + rep.n2, 2))
        b[: rep.n1, 0] = 1.0
        b[rep.n1 :, 1] = 1.0
        rep.f1.value = rep.f1.value + beta_true[0]
        rep.f2.value = rep.f2.value + beta_true[1]
        covs.append(b)
    data = ModelData.build(obs, mesh, covariates=covs)
    # long-range fields confound a per-replicate intercept, so the GLS
    # estimate is only loosely identified; exactness is covered by the
    # dense-GLS oracle test below
    beta_hat = profile_beta(params, nugget, data)
    assert beta_hat == pytest.approx(beta_true, abs=0.75)


def test_profile_beta_matches_dense_gls():
    mesh, params, nugget, obs = tiny_dataset(seed=7, n_obs=20)
    rep = obs.replicates[0]
    rng = np.random.default_rng(1)
    b = rng.standard_normal((rep.n1 + rep.n2, 3))
    data = ModelData.build(obs, mesh, covariates=[b])
    cov = dense_marginal_cov(params, nugget, data)[0]
    w = np.linalg.solve(cov, b)
    expect = np.linalg.solve(b.T @ w, w.T @ rep.y)
    assert profile_beta(params, nugget, data) == pytest.approx(expect, abs=1e-8)


def test_fit_requires_minimum_data():
    mesh, _, _, obs = tiny_dataset(n_obs=10)
    with pytest.raises(FitError, match="insufficient"):
        fit_gauss(obs, mesh)


def test_fit_improves_likelihood_over_start():
    mesh, params, nugget, obs = tiny_dataset(seed=8, n_obs=40, n_rep=2)
    init = default_init(obs, mesh, GENERAL)
    data = ModelData.build(obs, mesh)
    ll0 = loglik_gauss(init[0], init[1], data)
    fit = fit_gauss(obs, mesh, structure=GENERAL,
                    options={"enforce_min_points": False, "max_iter": 40})
    assert fit.loglik >= ll0
    assert fit.params_hat.kappa1 > 0
    assert abs(fit.nugget_hat.rho_e) < 1.0


def test_default_init_scales_with_data():
    mesh, _, _, obs = tiny_dataset(seed=9)
    for rep in obs.replicates:
        rep.f1.value = rep.f1.value * 10
    p, n = default_init(obs, mesh, DIAGONAL)
    assert p.sigma1 > 3 * p.sigma2
    assert n.sigma_e1 == pytest.approx(0.1 * p.sigma1)
