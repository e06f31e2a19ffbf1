"""Moving-window pipeline.

Splits the globe (or any lat/lon span) into equal-area reference boxes,
removes a deterministic seasonal-spatial mean field per variable, fits the
four candidate models (Gaussian/NIG driving noise x diagonal/general nugget)
on margin-extended windows, and scores exact leave-one-out predictions
inside each reference box, aggregating the scores globally with per-box
observation weights.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .gaussian import ModelData, fit_gauss
from .mesh import assemble_fem, make_rect_mesh
from .model import GAUSSIAN, NIG, build_operator
from .nig_fit import SgdOptions, conditional_moments, fit_nig, gibbs_step, initial_state
from .noise import DIAGONAL, GENERAL, nugget_precision
from .scoring import crps_gauss, crps_rb, mae, rmse, scrps_gauss, scrps_rb
from .simulate import sim_nugget, sim_weights
from .sparse import spd_factorize

REF_HEIGHT = 10.0
DEFAULT_MARGIN = 5.0
MIN_POINTS = 100
N_HARMONICS = 6
YEAR_DAYS = 365.0

MODEL_NAMES = ("gauss_diag", "gauss_general", "nig_diag", "nig_general")

MODEL_SPECS = {
    "gauss_diag": (GAUSSIAN, DIAGONAL),
    "gauss_general": (GAUSSIAN, GENERAL),
    "nig_diag": (NIG, DIAGONAL),
    "nig_general": (NIG, GENERAL),
}

SCORE_NAMES = ("rmse", "mae", "crps", "scrps")


class WindowError(Exception):
    pass


@dataclass(frozen=True)
class GridBox:
    """A reference box plus the margin defining its fitting window."""

    lat_range: tuple
    lon_range: tuple
    window_margin: float = DEFAULT_MARGIN

    @property
    def center(self):
        return (
            0.5 * (self.lon_range[0] + self.lon_range[1]),
            0.5 * (self.lat_range[0] + self.lat_range[1]),
        )

    @property
    def window_lat_range(self):
        return (self.lat_range[0] - self.window_margin,
                self.lat_range[1] + self.window_margin)

    @property
    def window_lon_range(self):
        return (self.lon_range[0] - self.window_margin,
                self.lon_range[1] + self.window_margin)

    def contains(self, loc, margin=0.0):
        """Boolean mask of locations inside the (optionally extended) box."""
        loc = np.atleast_2d(np.asarray(loc, dtype=np.float64))
        lon0, lon1 = self.lon_range[0] - margin, self.lon_range[1] + margin
        lat0, lat1 = self.lat_range[0] - margin, self.lat_range[1] + margin
        return (
            (loc[:, 0] >= lon0) & (loc[:, 0] <= lon1)
            & (loc[:, 1] >= lat0) & (loc[:, 1] <= lat1)
        )


def build_grid(lat_span=(-60.0, 60.0), lon_span=(0.0, 360.0),
               ref_height=REF_HEIGHT, margin=DEFAULT_MARGIN):
    """Equal-area grid: fixed-height bands with latitude-dependent widths.

    Box widths are ref_height / cos(band-center latitude), rounded so an
    integer number of boxes tiles the longitude span; areas then match the
    equatorial reference within a few percent.
    """
    lat0, lat1 = lat_span
    lon0, lon1 = lon_span
    if lat1 <= lat0 or lon1 <= lon0:
        raise WindowError("empty latitude or longitude span")
    boxes = []
    for band_lo in np.arange(lat0, lat1 - 1e-9, ref_height):
        band_hi = band_lo + ref_height
        center = 0.5 * (band_lo + band_hi)
        width_target = ref_height / np.cos(np.radians(center))
        n_boxes = max(1, int(round((lon1 - lon0) / width_target)))
        width = (lon1 - lon0) / n_boxes
        for j in range(n_boxes):
            boxes.append(GridBox(
                lat_range=(float(band_lo), float(band_hi)),
                lon_range=(float(lon0 + j * width), float(lon0 + (j + 1) * width)),
                window_margin=margin,
            ))
    return boxes


# ---------------------------------------------------------------------------
# seasonal-spatial mean field


@dataclass
class MeanFieldFit:
    """OLS fit of the 18-term quadratic-plus-harmonics mean surface."""

    coef: np.ndarray
    center: tuple

    def predict(self, loc, t):
        return mean_design(loc, t, self.center) @ self.coef


def mean_design(loc, t, center):
    """Design matrix: quadratic surface in centered coordinates plus an
    annual harmonic expansion of order 6 in day-of-year."""
    loc = np.atleast_2d(np.asarray(loc, dtype=np.float64))
    t = np.asarray(t, dtype=np.float64)
    xc = loc[:, 0] - center[0]
    yc = loc[:, 1] - center[1]
    cols = [np.ones(len(loc)), xc, yc, xc * yc, xc * xc, yc * yc]
    ang = 2.0 * np.pi * t / YEAR_DAYS
    for k in range(1, N_HARMONICS + 1):
        cols.append(np.cos(k * ang))
    for k in range(1, N_HARMONICS + 1):
        cols.append(np.sin(k * ang))
    return np.column_stack(cols)


def fit_mean_field(fobs, center):
    """Least-squares mean surface for one variable's observations."""
    if fobs.t is None:
        raise WindowError("mean-field fit needs day-of-year values")
    if len(fobs) < 6 + 2 * N_HARMONICS:
        raise WindowError("mean-field fit needs at least 18 observations")
    if len(np.unique(np.asarray(fobs.t))) < 2:
        raise WindowError("mean-field fit needs at least 2 distinct days")
    x = mean_design(fobs.loc, fobs.t, center)
    if np.linalg.matrix_rank(x) < x.shape[1]:
        raise WindowError("mean-field design matrix is rank deficient")
    coef, *_ = np.linalg.lstsq(x, fobs.value, rcond=None)
    return MeanFieldFit(coef=coef, center=center)


def residuals(fobs, fit):
    return fobs.value - fit.predict(fobs.loc, fobs.t)


# ---------------------------------------------------------------------------
# per-window fitting


@dataclass
class WindowFit:
    """Fit results of the candidate models on one window."""

    box: GridBox
    mesh: object
    status: str  # "fitted" or "omitted"
    fits: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    counts: tuple = (0, 0)


def _window_obs(box, obs):
    """Restrict an ObservationSet to a box's fitting window."""
    from .data import FieldObs, ObservationSet, Replicate

    reps = []
    for rep in obs.replicates:
        fos = []
        for fo in (rep.f1, rep.f2):
            keep = box.contains(fo.loc, margin=box.window_margin)
            fos.append(FieldObs(
                loc=fo.loc[keep], value=fo.value[keep],
                t=None if fo.t is None else np.asarray(fo.t)[keep],
            ))
        if len(fos[0]) or len(fos[1]):
            reps.append(Replicate(f1=fos[0], f2=fos[1]))
    if not reps:
        return None
    return ObservationSet(replicates=reps)


def _window_mesh(box, edge=1.0):
    lon0, lon1 = box.window_lon_range
    lat0, lat1 = box.window_lat_range
    nx = int(np.ceil((lon1 - lon0) / edge)) + 1
    ny = int(np.ceil((lat1 - lat0) / edge)) + 1
    return make_rect_mesh((lon0, lon1), (lat0, lat1), nx, ny)


def fit_window(box, obs, models=MODEL_NAMES, mesh_edge=2.0, min_points=MIN_POINTS,
               gauss_options=None, nig_options=None):
    """Fit the selected candidate models on one window's data.

    Windows with fewer than min_points observations in either field are
    marked omitted; per-model failures are recorded and the remaining models
    still run.
    """
    wobs = _window_obs(box, obs)
    if wobs is None:
        return WindowFit(box=box, mesh=None, status="omitted", counts=(0, 0))
    n1, n2 = wobs.counts()
    if n1 < min_points or n2 < min_points:
        return WindowFit(box=box, mesh=None, status="omitted", counts=(n1, n2))
    mesh = _window_mesh(box, edge=mesh_edge)
    out = WindowFit(box=box, mesh=mesh, status="fitted", counts=(n1, n2))
    for name in models:
        kind, structure = MODEL_SPECS[name]
        try:
            if kind == GAUSSIAN:
                opts = dict(gauss_options or {})
                opts.setdefault("min_points", min_points)
                out.fits[name] = fit_gauss(wobs, mesh, structure=structure,
                                           options=opts)
            else:
                opts = nig_options if nig_options is not None else SgdOptions(
                    chains=2, iterations=200, checkpoint_every=50,
                    min_points=min_points,
                )
                out.fits[name] = fit_nig(wobs, mesh, structure=structure,
                                         options=opts)
        except Exception as exc:
            out.errors[name] = f"{type(exc).__name__}: {exc}"
    return out


# ---------------------------------------------------------------------------
# leave-one-out cross-validation at fixed parameters


def _loo_gauss_moments(params, nugget, design, fem):
    """Exact leave-one-out predictive means/variances at fixed parameters.

    Uses the marginal observation precision Q_Y = Q_eps - Q_eps A
    Q_post^{-1} A^T Q_eps: conditioning a Gaussian on all but one coordinate
    gives mean_i = y_i - (Q_Y y)_i / (Q_Y)_ii and variance 1/(Q_Y)_ii.
    """
    op = build_operator(params, fem)
    return _loo_moments_from_prior(op.Qx, np.zeros(len(design.y)), nugget, design)


def _loo_moments_from_prior(q_prior, y_mean, nugget, design):
    q_eps = nugget_precision(nugget, design.layout)
    a = design.A
    q_post = (q_prior + a.T @ q_eps @ a).tocsc()
    factor = spd_factorize(((q_post + q_post.T) * 0.5).tocsc())
    qa = (q_eps @ a).toarray()
    m = factor.solve(qa.T)  # (2n, n_obs)
    q_y = q_eps.toarray() - qa @ m
    d = np.diag(q_y)
    r = design.y - y_mean
    mean = design.y - (q_y @ r) / d
    var = 1.0 / d
    return mean, var


def _loo_nig_mixture(params, nugget, design, fem, n_draws, seed):
    """Two independent sets of conditional LOO moments from Gibbs v-draws.

    Conditional on the mixing variances the model is Gaussian, so each
    v-draw yields exact leave-one-out means and variances; the draws come
    from the full-data Gibbs chain, deliberately ignoring the held-out
    point's influence on v (re-running the chain per held-out point would
    be quadratic in window size for a negligible change in the draws).
    """
    op = build_operator(params, fem)
    rng = np.random.default_rng(seed)
    state = initial_state(op, params, nugget, design)
    burn = max(5, n_draws // 4)
    mixtures = []
    mu_vec = np.concatenate([np.full(op.n, params.mu1), np.full(op.n, params.mu2)])
    for _ in range(2):
        mus, vars_ = [], []
        for j in range(burn + n_draws):
            state = gibbs_step(state, params, nugget, design, op, rng)
            if j < burn:
                continue
            v = state.v
            dv_inv = 1.0 / v
            q_prior = (op.K.T @ sp.diags(dv_inv) @ op.K).tocsc()
            # latent mean given v: K w has mean mu (v - h)
            w_mean = np.asarray(
                sp.linalg.splu(op.K.tocsc()).solve(mu_vec * (v - op.h2))
            )
            y_mean = design.A @ w_mean
            m, s2 = _loo_moments_from_prior(q_prior, y_mean, nugget, design)
            mus.append(m)
            vars_.append(s2)
        mixtures.append((np.array(mus), np.array(vars_)))
    return mixtures


def loocv_window(window_fit, fem=None, nig_draws=20, seed=0):
    """Per-model LOOCV scores on the reference-box observations.

    Returns {model: {"rmse":..., "mae":..., "crps":..., "scrps":..., "n":...}}
    for each successfully fitted model; parameters stay fixed at the
    full-window estimates.
    """
    if window_fit.status != "fitted":
        raise WindowError("cannot score an omitted window")
    box = window_fit.box
    mesh = window_fit.mesh
    fem = fem if fem is not None else assemble_fem(mesh)
    scores = {}
    for name, fit in window_fit.fits.items():
        kind, _ = MODEL_SPECS[name]
        data = fit.diagnostics.get("data")
        per_y, per_mean, per_mu1, per_var1, per_mu2, per_var2 = [], [], [], [], [], []
        crps_vals, scrps_vals = [], []
        for design in data.designs:
            # reference-box mask over the stacked observation vector
            rep_locs = _design_locations(design, mesh)
            keep = box.contains(rep_locs)
            if not np.any(keep):
                continue
            y = design.y[keep]
            if kind == GAUSSIAN:
                mean, var = _loo_gauss_moments(fit.params_hat, fit.nugget_hat,
                                               design, fem)
                mean, var = mean[keep], var[keep]
                per_mean.append(mean)
                per_y.append(y)
                crps_vals.append(crps_gauss(mean, np.sqrt(var), y))
                scrps_vals.append(scrps_gauss(mean, np.sqrt(var), y))
            else:
                (m1, v1), (m2, v2) = _loo_nig_mixture(
                    fit.params_hat, fit.nugget_hat, design, fem, nig_draws, seed
                )
                m1k, v1k = m1[:, keep], v1[:, keep]
                m2k, v2k = m2[:, keep], v2[:, keep]
                mean = m1k.mean(axis=0)
                per_mean.append(mean)
                per_y.append(y)
                crps_vals.append(np.array([
                    crps_rb(m1k[:, i], v1k[:, i], m2k[:, i], v2k[:, i], y[i])
                    for i in range(len(y))
                ]))
                scrps_vals.append(np.array([
                    scrps_rb(m1k[:, i], v1k[:, i], m2k[:, i], v2k[:, i], y[i])
                    for i in range(len(y))
                ]))
        if not per_y:
            continue
        y_all = np.concatenate(per_y)
        mean_all = np.concatenate(per_mean)
        scores[name] = {
            "rmse": rmse(mean_all, y_all),
            "mae": mae(mean_all, y_all),
            "crps": float(np.mean(np.concatenate(crps_vals))),
            "scrps": float(np.mean(np.concatenate(scrps_vals))),
            "n": int(len(y_all)),
        }
    return scores


def _design_locations(design, mesh):
    """Observation coordinates recovered from the projector rows."""
    # each projector row is a convex combination of the vertices of the
    # containing triangle, so A V reproduces the observation coordinates
    return design.A @ np.vstack([mesh.vertices, mesh.vertices])


def aggregate_scores(per_box_scores):
    """Count-weighted global scores and per-metric best-model tallies.

    per_box_scores: list of {model: {metric: value, "n": count}} dicts.
    Returns (global_scores, tallies) where global_scores[model][metric] is
    the observation-weighted average over boxes and tallies[metric][model]
    counts the boxes where that model achieved the lowest score.
    """
    totals, weights = {}, {}
    tallies = {metric: {} for metric in SCORE_NAMES}
    for box_scores in per_box_scores:
        for metric in SCORE_NAMES:
            contenders = {m: s[metric] for m, s in box_scores.items()}
            if contenders:
                best = min(contenders, key=lambda m: contenders[m])
                tallies[metric][best] = tallies[metric].get(best, 0) + 1
        for model, s in box_scores.items():
            w = s["n"]
            acc = totals.setdefault(model, dict.fromkeys(SCORE_NAMES, 0.0))
            for metric in SCORE_NAMES:
                acc[metric] += w * s[metric]
            weights[model] = weights.get(model, 0) + w
    out = {}
    for model, acc in totals.items():
        out[model] = {metric: acc[metric] / weights[model] for metric in SCORE_NAMES}
        out[model]["n"] = weights[model]
    return out, tallies


# ---------------------------------------------------------------------------
# QQ diagnostics


def qq_table(fit, obs, mesh, n_sims=20, seed=0, probs=None):
    """Numeric QQ diagnostic: observed quantiles against a simulation envelope.

    Simulates n_sims datasets from the fitted model at the observed
    locations and reports, per field and probability level, the observed
    quantile with the min/median/max of the simulated quantiles.
    """
    if probs is None:
        probs = np.linspace(0.05, 0.95, 19)
    probs = np.asarray(probs, dtype=np.float64)
    fem = assemble_fem(mesh)
    op = build_operator(fit.params_hat, fem)
    rng = np.random.default_rng(seed)
    rows = []
    for k, pick in ((1, lambda r: r.f1), (2, lambda r: r.f2)):
        observed = np.concatenate([pick(r).value for r in obs.replicates])
        obs_q = np.quantile(observed, probs)
        sim_q = []
        for _ in range(n_sims):
            vals = []
            for rep in obs.replicates:
                w, _ = sim_weights(op, fit.params_hat, rng)
                from .mesh import projector

                loc = pick(rep).loc
                a = projector(mesh, loc)
                half = w[: op.n] if k == 1 else w[op.n:]
                latent = a @ half
                layout = rep.layout()
                eps = sim_nugget(fit.nugget_hat, layout, rng)
                noise = eps[: layout.n1] if k == 1 else eps[layout.n1:]
                vals.append(latent + noise)
            sim_q.append(np.quantile(np.concatenate(vals), probs))
        sim_q = np.array(sim_q)
        for i, p in enumerate(probs):
            rows.append({
                "field": k, "prob": float(p), "observed": float(obs_q[i]),
                "sim_min": float(sim_q[:, i].min()),
                "sim_median": float(np.median(sim_q[:, i])),
                "sim_max": float(sim_q[:, i].max()),
            })
    return rows


QQ_COLUMNS = ["field", "prob", "observed", "sim_min", "sim_median", "sim_max"]


def write_qq_csv(rows, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(QQ_COLUMNS)
    for row in rows:
        w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                    for c in QQ_COLUMNS])
