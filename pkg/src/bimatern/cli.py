"""Command-line interface.

Subcommands cover the full pipeline: mesh construction, simulation, model
fitting, prediction, scoring, the simulation study and the moving-window
protocol. Every subcommand is deterministic under --seed, writes CSV/JSON
artifacts with header rows, and logs single-line key=value records to
stderr.
"""

from __future__ import annotations

import json
import sys

import click
import numpy as np

from . import experiments
from .data import DataError, from_csv_string, read_csv, write_csv
from .gaussian import FitError, FitResult, fit_gauss, predict_gauss
from .mesh import TriMesh, assemble_fem, make_rect_mesh
from .model import GAUSSIAN, NIG, BivModelParams, build_operator, pearson_corr
from .nig_fit import SgdOptions, fit_nig, predict_nig
from .noise import DIAGONAL, GENERAL, NuggetParams
from .scoring import crps_gauss, mae, rmse, scrps_gauss
from .simulate import simulate_dataset
from .windows import (
    MODEL_NAMES,
    aggregate_scores,
    build_grid,
    fit_mean_field,
    fit_window,
    loocv_window,
    qq_table,
    residuals,
    write_qq_csv,
)


def log(**kv):
    sys.stderr.write(" ".join(f"{k}={v}" for k, v in kv.items()) + "\n")


def fail(message, code=1):
    sys.stderr.write(f"error={message!r}\n")
    sys.exit(code)


def parse_range(text):
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 2 or parts[1] <= parts[0]:
        raise click.BadParameter(f"expected 'lo,hi' with lo < hi, got {text!r}")
    return tuple(parts)


def load_mesh(mesh_path, grid):
    if mesh_path:
        with open(mesh_path) as fh:
            return TriMesh.from_json(fh.read())
    if grid:
        x0, x1, y0, y1, nx, ny = [float(v) for v in grid.split(",")]
        return make_rect_mesh((x0, x1), (y0, y1), int(nx), int(ny))
    raise click.UsageError("provide --mesh FILE or --grid x0,x1,y0,y1,nx,ny")


def params_from_dict(d):
    kind = d.get("noise_kind", GAUSSIAN)
    return BivModelParams(
        kappa1=d["kappa1"], kappa2=d["kappa2"],
        sigma1=d["sigma1"], sigma2=d["sigma2"],
        rho=d.get("rho", 0.0), theta=d.get("theta", 0.0), noise_kind=kind,
        eta1=d.get("eta1", 1.0), eta2=d.get("eta2", 1.0),
        mu1=d.get("mu1", 0.0), mu2=d.get("mu2", 0.0),
    )


def nugget_from_dict(d):
    return NuggetParams(
        sigma_e1=d["sigma_e1"], sigma_e2=d["sigma_e2"],
        rho_e=d.get("rho_e", 0.0),
        structure=d.get("structure", DIAGONAL),
    )


def params_to_dict(p):
    out = {
        "kappa1": p.kappa1, "kappa2": p.kappa2,
        "sigma1": p.sigma1, "sigma2": p.sigma2, "rho": p.rho,
        "noise_kind": p.noise_kind,
    }
    if p.noise_kind == NIG:
        out.update(theta=p.theta, eta1=p.eta1, eta2=p.eta2, mu1=p.mu1, mu2=p.mu2)
    return out


def nugget_to_dict(n):
    return {"sigma_e1": n.sigma_e1, "sigma_e2": n.sigma_e2,
            "rho_e": n.rho_e, "structure": n.structure}


@click.group()
def main():
    """Bivariate Matern-SPDE fields with a correlated nugget effect."""


@main.command()
@click.option("--grid", default=None, help="x0,x1,y0,y1,nx,ny rectangle spec.")
@click.option("--inspect", "inspect_path", default=None,
              help="Mesh JSON file to summarize instead of generating.")
@click.option("-o", "--output", type=click.Path(), default=None)
def mesh(grid, inspect_path, output):
    """Generate a rectangular mesh or inspect an existing mesh file."""
    if inspect_path:
        with open(inspect_path) as fh:
            m = TriMesh.from_json(fh.read())
        log(vertices=m.n_vertices, triangles=m.n_triangles, area=m.area())
        click.echo(json.dumps({
            "vertices": m.n_vertices, "triangles": m.n_triangles,
            "area": m.area(),
        }))
        return
    if not grid:
        raise click.UsageError("provide --grid or --inspect")
    m = load_mesh(None, grid)
    text = m.to_json()
    if output:
        with open(output, "w") as fh:
            fh.write(text)
        log(command="mesh", output=output, vertices=m.n_vertices)
    else:
        click.echo(text)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True,
              help="JSON with 'params' and 'nugget' sections.")
@click.option("--mesh", "mesh_path", type=click.Path(exists=True), default=None)
@click.option("--grid", default=None)
@click.option("--n-obs", default=100, show_default=True)
@click.option("--replicates", default=1, show_default=True)
@click.option("--margin", default=0.0, show_default=True,
              help="Keep observation sites this far inside the mesh box.")
@click.option("--seed", default=0, show_default=True)
@click.option("-o", "--output", type=click.Path(), required=True)
def simulate(config_path, mesh_path, grid, n_obs, replicates, margin, seed, output):
    """Simulate bivariate observations from a model configuration."""
    with open(config_path) as fh:
        cfg = json.load(fh)
    try:
        params = params_from_dict(cfg["params"])
        nugget = nugget_from_dict(cfg["nugget"])
    except (KeyError, TypeError) as exc:
        fail(f"bad config {config_path}: missing {exc}")
    m = load_mesh(mesh_path, grid)
    op = build_operator(params, assemble_fem(m))
    rng = np.random.default_rng(seed)
    obs = simulate_dataset(m, op, params, nugget, n_obs, replicates, rng,
                           margin=margin)
    with open(output, "w", newline="") as fh:
        write_csv(obs, fh)
    log(command="simulate", output=output, n_obs=n_obs, replicates=replicates,
        seed=seed)


@main.command()
@click.option("--input", "input_path", type=click.Path(exists=True), required=True)
@click.option("--mesh", "mesh_path", type=click.Path(exists=True), default=None)
@click.option("--grid", default=None)
@click.option("--model", type=click.Choice([GAUSSIAN, NIG]), default=GAUSSIAN,
              show_default=True)
@click.option("--structure", type=click.Choice([DIAGONAL, GENERAL]),
              default=GENERAL, show_default=True)
@click.option("--min-points", default=100, show_default=True)
@click.option("--no-min-points", is_flag=True,
              help="Disable the minimum-observations rule.")
@click.option("--iterations", default=None, type=int,
              help="NIG stochastic-gradient iterations.")
@click.option("--chains", default=4, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("-o", "--output", type=click.Path(), required=True)
@click.option("--trace", "trace_path", type=click.Path(), default=None)
def fit(input_path, mesh_path, grid, model, structure, min_points, no_min_points,
        iterations, chains, seed, output, trace_path):
    """Fit the Gaussian or NIG model to observations."""
    try:
        with open(input_path) as fh:
            obs = read_csv(fh)
    except DataError as exc:
        fail(f"{input_path}: {exc}")
    m = load_mesh(mesh_path, grid)
    try:
        if model == GAUSSIAN:
            result = fit_gauss(obs, m, structure=structure, options={
                "min_points": min_points,
                "enforce_min_points": not no_min_points,
            })
        else:
            opts = SgdOptions(
                chains=chains, seed=seed, min_points=min_points,
                enforce_min_points=not no_min_points,
                **({"iterations": iterations} if iterations else {}),
            )
            result = fit_nig(obs, m, structure=structure, options=opts)
    except FitError as exc:
        fail(str(exc))
    payload = {
        "model": model,
        "params": params_to_dict(result.params_hat),
        "nugget": nugget_to_dict(result.nugget_hat),
        "loglik": result.loglik,
        "iterations": result.iterations,
        "converged": result.converged,
        "pearson": pearson_corr(result.params_hat),
        "mesh": json.loads(m.to_json()),
    }
    with open(output, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    if trace_path:
        with open(trace_path, "w") as fh:
            fh.write("iteration," + ",".join(
                f"x{i}" for i in range(result.trace.shape[1])) + "\n")
            for i, row in enumerate(result.trace):
                fh.write(",".join([str(i)] + [repr(v) for v in row]) + "\n")
    log(command="fit", model=model, structure=structure,
        converged=result.converged, loglik=result.loglik, output=output)


@main.command()
@click.option("--fit", "fit_path", type=click.Path(exists=True), required=True)
@click.option("--input", "input_path", type=click.Path(exists=True), required=True)
@click.option("--locations", "loc_path", type=click.Path(exists=True), required=True,
              help="CSV with header x,y.")
@click.option("--samples", default=200, show_default=True,
              help="Gibbs draws for NIG prediction.")
@click.option("--seed", default=0, show_default=True)
@click.option("-o", "--output", type=click.Path(), required=True)
def predict(fit_path, input_path, loc_path, samples, seed, output):
    """Predict both latent fields at new locations from a saved fit."""
    with open(fit_path) as fh:
        payload = json.load(fh)
    try:
        with open(input_path) as fh:
            obs = read_csv(fh)
    except DataError as exc:
        fail(f"{input_path}: {exc}")
    m = TriMesh.from_json(json.dumps(payload["mesh"]))
    locations = _read_locations(loc_path)
    result = FitResult(
        params_hat=params_from_dict(payload["params"]),
        nugget_hat=nugget_from_dict(payload["nugget"]),
        loglik=payload.get("loglik", 0.0), iterations=0, converged=True,
        trace=np.empty((0, 0)),
    )
    if payload["model"] == GAUSSIAN:
        pred = predict_gauss(result, obs, m, locations)
    else:
        pred = predict_nig(result, obs, m, locations, n_samples=samples, seed=seed)
    with open(output, "w") as fh:
        fh.write("replicate,field,x,y,mean,var\n")
        n_rep = pred["mean1"].shape[0]
        for r in range(n_rep):
            for k in (1, 2):
                for j, (x, y) in enumerate(locations):
                    fh.write(",".join([
                        str(r), str(k), repr(float(x)), repr(float(y)),
                        repr(float(pred[f"mean{k}"][r, j])),
                        repr(float(pred[f"var{k}"][r, j])),
                    ]) + "\n")
    log(command="predict", model=payload["model"], locations=len(locations),
        output=output)


def _read_locations(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0].lower().replace(" ", "") not in ("x,y",):
        fail(f"{path}: expected header 'x,y'")
    out = []
    for i, ln in enumerate(lines[1:], start=2):
        try:
            x, y = [float(v) for v in ln.split(",")]
        except ValueError:
            fail(f"{path} line {i}: malformed row {ln!r}")
        out.append((x, y))
    return np.array(out)


@main.command()
@click.option("--predictions", "pred_path", type=click.Path(exists=True), required=True)
@click.option("--truth", "truth_path", type=click.Path(exists=True), required=True,
              help="Observations CSV holding the realized values.")
@click.option("-o", "--output", type=click.Path(), required=True)
def score(pred_path, truth_path, output):
    """Score Gaussian predictions (mean,var) against realized values."""
    try:
        with open(truth_path) as fh:
            obs = read_csv(fh)
    except DataError as exc:
        fail(f"{truth_path}: {exc}")
    truth = {}
    for r, rep in enumerate(obs.replicates):
        for k, fo in ((1, rep.f1), (2, rep.f2)):
            for i in range(len(fo)):
                key = (r, k, round(float(fo.loc[i, 0]), 9), round(float(fo.loc[i, 1]), 9))
                truth[key] = float(fo.value[i])
    with open(pred_path) as fh:
        header = fh.readline().strip().split(",")
        if header != ["replicate", "field", "x", "y", "mean", "var"]:
            fail(f"{pred_path}: bad header {header}")
        mus, vars_, ys = [], [], []
        for lineno, ln in enumerate(fh, start=2):
            if not ln.strip():
                continue
            r, k, x, y, mu, var = ln.strip().split(",")
            key = (int(r), int(k), round(float(x), 9), round(float(y), 9))
            if key not in truth:
                fail(f"{pred_path} line {lineno}: no matching observation")
            mus.append(float(mu))
            vars_.append(float(var))
            ys.append(truth[key])
    if not mus:
        fail(f"{pred_path}: no predictions")
    mus, vars_, ys = np.array(mus), np.array(vars_), np.array(ys)
    sd = np.sqrt(vars_)
    rows = [
        ("rmse", rmse(mus, ys)),
        ("mae", mae(mus, ys)),
        ("crps", float(np.mean(crps_gauss(mus, sd, ys)))),
        ("scrps", float(np.mean(scrps_gauss(mus, sd, ys)))),
    ]
    with open(output, "w") as fh:
        fh.write("metric,value,n\n")
        for name, val in rows:
            fh.write(f"{name},{val!r},{len(ys)}\n")
    log(command="score", n=len(ys), output=output)


@main.command("sim-study")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--cells", default=None,
              help="Cell subset like 'rho=0,rho_eps=-0.8' (repeatable via ';').")
@click.option("--seeds", default=None, type=int, help="Seeds per cell.")
@click.option("--n-obs", default=None, type=int)
@click.option("--seed", default=0, show_default=True)
@click.option("--threads", default=1, show_default=True)
@click.option("-o", "--output", type=click.Path(), required=True)
@click.option("--summary", "summary_path", type=click.Path(), default=None)
def sim_study(config_path, cells, seeds, n_obs, seed, threads, output, summary_path):
    """Run the simulation-study grid and write estimate tables."""
    if config_path:
        with open(config_path) as fh:
            try:
                cfg = experiments.SimStudyConfig.from_json(fh.read())
            except experiments.ExperimentError as exc:
                fail(f"{config_path}: {exc}")
    else:
        cfg = experiments.SimStudyConfig()
    overrides = {}
    if cells:
        rhos, rho_es = set(), set()
        for cell in cells.split(";"):
            fields = dict(part.split("=") for part in cell.split(","))
            if set(fields) != {"rho", "rho_eps"}:
                fail(f"bad --cells entry {cell!r}, expected rho=..,rho_eps=..")
            rhos.add(float(fields["rho"]))
            rho_es.add(float(fields["rho_eps"]))
        overrides["rho_values"] = tuple(sorted(rhos))
        overrides["rho_e_values"] = tuple(sorted(rho_es))
    if seeds is not None:
        overrides["n_seeds"] = seeds
    if n_obs is not None:
        overrides["n_obs"] = n_obs
    overrides["seed"] = seed
    overrides["workers"] = threads
    cfg = experiments.SimStudyConfig(**{
        **{k: getattr(cfg, k) for k in cfg.__dataclass_fields__}, **overrides,
    })
    log(command="sim-study", cells=len(cfg.rho_values) * len(cfg.rho_e_values),
        seeds=cfg.n_seeds, workers=cfg.workers)
    rows = experiments.run_sim_study(cfg)
    with open(output, "w") as fh:
        experiments.write_table(rows, fh)
    if summary_path:
        with open(summary_path, "w") as fh:
            experiments.write_table(experiments.summarize(rows), fh,
                                    columns=experiments.summary_columns())
    n_failed = sum(1 for r in rows if r["error"])
    log(command="sim-study", rows=len(rows), failed=n_failed, output=output)


@main.command("windows")
@click.option("--input", "input_path", type=click.Path(exists=True), required=True)
@click.option("--lat-span", default="0,20", show_default=True)
@click.option("--lon-span", default="0,20", show_default=True)
@click.option("--models", default="gauss_diag,gauss_general", show_default=True)
@click.option("--mesh-edge", default=2.0, show_default=True)
@click.option("--min-points", default=100, show_default=True)
@click.option("--mean-field/--no-mean-field", default=False, show_default=True,
              help="Remove a per-variable seasonal-spatial mean first.")
@click.option("--qq/--no-qq", default=False, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--outdir", type=click.Path(), required=True)
def windows_cmd(input_path, lat_span, lon_span, models, mesh_edge, min_points,
                mean_field, qq, seed, outdir):
    """Run the moving-window pipeline over a lat/lon span."""
    import os

    try:
        with open(input_path) as fh:
            obs = read_csv(fh)
    except DataError as exc:
        fail(f"{input_path}: {exc}")
    os.makedirs(outdir, exist_ok=True)
    model_list = tuple(m.strip() for m in models.split(","))
    for m in model_list:
        if m not in MODEL_NAMES:
            fail(f"unknown model {m!r}, choose from {MODEL_NAMES}")
    boxes = build_grid(lat_span=parse_range(lat_span),
                       lon_span=parse_range(lon_span))
    if mean_field:
        from .windows import WindowError

        for rep in obs.replicates:
            for fo in (rep.f1, rep.f2):
                try:
                    center = tuple(fo.loc.mean(axis=0))
                    mf = fit_mean_field(fo, center)
                except WindowError as exc:
                    fail(f"mean-field fit failed: {exc}")
                fo.value = residuals(fo, mf)
    param_rows, score_rows, omitted = [], [], []
    box_scores = []
    for idx, box in enumerate(boxes):
        wf = fit_window(box, obs, models=model_list, mesh_edge=mesh_edge,
                        min_points=min_points)
        if wf.status == "omitted":
            omitted.append((idx, box, wf.counts))
            log(window=idx, status="omitted", n1=wf.counts[0], n2=wf.counts[1])
            continue
        scores = loocv_window(wf, seed=seed)
        box_scores.append(scores)
        for name, fres in wf.fits.items():
            p, ng = fres.params_hat, fres.nugget_hat
            param_rows.append([
                idx, name, p.kappa1, p.kappa2, p.sigma1, p.sigma2, p.rho,
                ng.sigma_e1, ng.sigma_e2, ng.rho_e, fres.loglik,
            ])
        for name, s in scores.items():
            score_rows.append([idx, name, s["rmse"], s["mae"], s["crps"],
                               s["scrps"], s["n"]])
        for name, err in wf.errors.items():
            log(window=idx, model=name, error=repr(err))
        if qq and "gauss_general" in wf.fits:
            rows = qq_table(wf.fits["gauss_general"], obs, wf.mesh, seed=seed)
            with open(os.path.join(outdir, f"qq_window{idx}.csv"), "w") as fh:
                write_qq_csv(rows, fh)
        log(window=idx, status="fitted", models=len(wf.fits))
    with open(os.path.join(outdir, "window_params.csv"), "w") as fh:
        fh.write("window,model,kappa1,kappa2,sigma1,sigma2,rho,"
                 "sigma_e1,sigma_e2,rho_e,loglik\n")
        for row in param_rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")
    with open(os.path.join(outdir, "window_scores.csv"), "w") as fh:
        fh.write("window,model,rmse,mae,crps,scrps,n\n")
        for row in score_rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")
    with open(os.path.join(outdir, "omitted_windows.csv"), "w") as fh:
        fh.write("window,lat0,lat1,lon0,lon1,n1,n2\n")
        for idx, box, counts in omitted:
            fh.write(f"{idx},{box.lat_range[0]!r},{box.lat_range[1]!r},"
                     f"{box.lon_range[0]!r},{box.lon_range[1]!r},"
                     f"{counts[0]},{counts[1]}\n")
    if box_scores:
        global_scores, tallies = aggregate_scores(box_scores)
        with open(os.path.join(outdir, "global_scores.csv"), "w") as fh:
            fh.write("model,rmse,mae,crps,scrps,n\n")
            for name in sorted(global_scores):
                s = global_scores[name]
                fh.write(",".join([name] + [repr(s[m]) for m in
                                            ("rmse", "mae", "crps", "scrps")]
                                  + [str(s["n"])]) + "\n")
        with open(os.path.join(outdir, "best_model_counts.csv"), "w") as fh:
            fh.write("metric,model,count\n")
            for metric in sorted(tallies):
                for name in sorted(tallies[metric]):
                    fh.write(f"{metric},{name},{tallies[metric][name]}\n")
    log(command="windows", boxes=len(boxes), fitted=len(box_scores),
        omitted=len(omitted), outdir=outdir)


if __name__ == "__main__":
    main()
