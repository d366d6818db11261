"""Command line for the staged clustering pipeline.

Each stage reads and writes plain files so runs compose in shell
pipelines and every intermediate artifact can be inspected:

    ensdens fit data.csv -o out/          -> pool.json, fit_report.json
    ensdens ensemble out/pool.json data.csv --penalty bic -o out/
                                           -> weights.json
    ensdens cluster out/pool.json out/weights.json data.csv -o out/
                                           -> partition.json, density_grid.csv
    ensdens simulate plan.txt -o out/      -> results.csv, summary.json
    ensdens evaluate out/partition.json labels.csv -o out/ -> metrics.json
    ensdens report out/results.csv -o out/ -> summary.json

Exit codes: 0 on success, 1 on pipeline failure (e.g. every grid cell
failed), 2 on usage or parse errors.
"""

from __future__ import annotations

import csv as _csv
import os

import click
import numpy as np

from . import io as edio
from .fit import FitConfig, PipelineError, fit_grid, pool_from_dict, pool_to_dict
from .evaluation import ContingencyTable, adjusted_rand_index
from .mixture import CovarianceStructure, EnsembleDensity
from .modal import find_partition
from .simulation import ExperimentPlan, run_experiment
from .weights import (
    CvConfig,
    PenaltySpec,
    fit_weights,
    lambda_aic,
    lambda_bic,
    lambda_cv,
    log_density_matrix,
    weight_fit_to_dict,
)

import json


def _read_data(path, header):
    try:
        return edio.read_numeric_csv(path, header=header)
    except edio.CsvError as exc:
        raise click.UsageError(str(exc)) from exc


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise click.UsageError(f"cannot read {path}: {exc}") from exc


def _ensure_outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


@click.group()
def main():
    """Ensemble model-based clustering via penalized density averaging."""


@main.command("fit")
@click.argument("data_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output-dir", default=".", show_default=True)
@click.option("--header/--no-header", default=True, show_default=True,
              help="Whether the first CSV line is a header.")
@click.option("--k-min", default=1, show_default=True)
@click.option("--k-max", default=9, show_default=True)
@click.option("--structures", default="EII,VII,EEI,VVI,EEE,VVV", show_default=True,
              help="Comma-separated covariance structure codes.")
@click.option("--max-iter", default=500, show_default=True)
@click.option("--rel-tol", default=1e-8, show_default=True)
@click.option("--n-init", default=5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("-M", "--ensemble-size", default=30, show_default=True)
def cmd_fit(data_csv, output_dir, header, k_min, k_max, structures, max_iter,
            rel_tol, n_init, seed, ensemble_size):
    """Fit the (K, structure) model grid and rank candidates by BIC."""
    data = _read_data(data_csv, header)
    try:
        structs = tuple(CovarianceStructure(s.strip().upper()) for s in structures.split(","))
    except ValueError as exc:
        raise click.UsageError(f"bad --structures: {exc}") from exc
    if k_min < 1 or k_max < k_min:
        raise click.UsageError("need 1 <= k-min <= k-max")
    config = FitConfig(
        k_range=tuple(range(k_min, k_max + 1)),
        structures=structs,
        max_iter=max_iter,
        rel_tol=rel_tol,
        n_init=n_init,
        seed=seed,
    )
    try:
        pool = fit_grid(data, config, ensemble_size=ensemble_size)
    except PipelineError as exc:
        raise click.ClickException(str(exc)) from exc

    out = _ensure_outdir(output_dir)
    pool_obj = pool_to_dict(pool)
    report = {
        "schema_version": 1,
        "n": int(data.shape[0]),
        "d": int(data.shape[1]),
        "k_range": list(config.k_range),
        "structures": [s.value for s in config.structures],
        "seed": seed,
        "grid": pool_obj.pop("grid_report"),
    }
    edio.write_json(pool_obj, os.path.join(out, "pool.json"))
    edio.write_json(report, os.path.join(out, "fit_report.json"))
    best = pool.models[0]
    click.echo(
        f"fitted {len([g for g in report['grid'] if g['status'] == 'ok'])} models; "
        f"kept {len(pool.models)}; best K={best.n_components} "
        f"{best.structure.value} BIC={best.bic:.2f}"
    )


def _parse_cv_grid(text):
    try:
        lo, hi, count = text.split(":")
        lo, hi, count = float(lo), float(hi), int(count)
    except ValueError as exc:
        raise click.UsageError("--cv-grid must be min:max:count") from exc
    if not (0 < lo < hi) or count < 1:
        raise click.UsageError("--cv-grid must satisfy 0 < min < max, count >= 1")
    return np.geomspace(lo, hi, count)


@main.command("ensemble")
@click.argument("pool_json", type=click.Path(exists=True, dir_okay=False))
@click.argument("data_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output-dir", default=".", show_default=True)
@click.option("--header/--no-header", default=True, show_default=True)
@click.option("--penalty", type=click.Choice(["aic", "bic", "cv"]), default="bic",
              show_default=True)
@click.option("--lambda", "lambda_override", type=float, default=None,
              help="Manual penalty strength, overriding --penalty.")
@click.option("--cv-folds", default=5, show_default=True)
@click.option("--cv-grid", default=None, help="Lambda grid as min:max:count.")
@click.option("--seed", default=0, show_default=True)
def cmd_ensemble(pool_json, data_csv, output_dir, header, penalty, lambda_override,
                 cv_folds, cv_grid, seed):
    """Estimate ensemble weights by penalized maximum likelihood."""
    pool = pool_from_dict(_read_json(pool_json))
    data = _read_data(data_csv, header)
    if data.shape[1] != pool.models[0].d:
        raise click.UsageError(
            f"data dimension {data.shape[1]} does not match pool dimension {pool.models[0].d}"
        )
    n = data.shape[0]
    cv_table = None
    if lambda_override is not None:
        lam = lambda_override
    elif penalty == "aic":
        lam = lambda_aic()
    elif penalty == "bic":
        lam = lambda_bic(n)
    else:
        grid = _parse_cv_grid(cv_grid) if cv_grid else None
        lam, cv_table = lambda_cv(
            data, pool, CvConfig(folds=cv_folds, lambda_grid=grid, seed=seed)
        )
    dm = log_density_matrix(data, pool.models)
    nu = np.array([m.nu for m in pool.models], dtype=float)
    wf = fit_weights(dm, PenaltySpec(lam=lam, nu=nu))

    out = _ensure_outdir(output_dir)
    obj = weight_fit_to_dict(wf)
    obj["penalty"] = "manual" if lambda_override is not None else penalty
    if cv_table is not None:
        obj["cv_table"] = cv_table
    edio.write_json(obj, os.path.join(out, "weights.json"))
    kept = int(np.sum(wf.alpha >= 1e-6))
    click.echo(f"lambda={lam:.3f}; {kept}/{len(pool.models)} models keep weight >= 1e-6")


@main.command("cluster")
@click.argument("pool_json", type=click.Path(exists=True, dir_okay=False))
@click.argument("weights_json", type=click.Path(exists=True, dir_okay=False))
@click.argument("data_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output-dir", default=".", show_default=True)
@click.option("--header/--no-header", default=True, show_default=True)
@click.option("--merge-tol", type=float, default=None,
              help="Mode merge tolerance; default is scale-aware.")
@click.option("--max-ascend-iter", default=10_000, show_default=True)
@click.option("--grid-res", default=200, show_default=True,
              help="Node count per axis of the exported 2-d density grid.")
def cmd_cluster(pool_json, weights_json, data_csv, output_dir, header, merge_tol,
                max_ascend_iter, grid_res):
    """Partition data by the modes of the weighted ensemble density."""
    pool = pool_from_dict(_read_json(pool_json))
    wobj = _read_json(weights_json)
    alpha = np.asarray(wobj.get("alpha", []), dtype=float)
    if alpha.shape != (len(pool.models),):
        raise click.UsageError(
            f"weights length {alpha.size} does not match pool size {len(pool.models)}"
        )
    data = _read_data(data_csv, header)
    if data.shape[1] != pool.models[0].d:
        raise click.UsageError("data dimension does not match the pool")
    ens = EnsembleDensity(models=pool.models, alpha=alpha)
    part = find_partition(data, ens, merge_tol=merge_tol, max_iter=max_ascend_iter)

    out = _ensure_outdir(output_dir)
    obj = {
        "schema_version": 1,
        "method": part.method_tag,
        "k_hat": part.n_clusters,
        "labels": part.labels.tolist(),
        "modes": [
            {
                "location": m.location.tolist(),
                "log_density": m.log_density,
                "basin_size": m.basin_size,
            }
            for m in part.modes
        ],
        "merge_tol": part.merge_tol,
        "warnings": list(part.warnings),
    }
    edio.write_json(obj, os.path.join(out, "partition.json"))
    if data.shape[1] == 2:
        sd = data.std(axis=0)
        lo = data.min(axis=0) - 0.5 * sd
        hi = data.max(axis=0) + 0.5 * sd
        xs = np.linspace(lo[0], hi[0], grid_res)
        ys = np.linspace(lo[1], hi[1], grid_res)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        dens = np.exp(ens.log_density(pts))
        with open(os.path.join(out, "density_grid.csv"), "w") as fh:
            fh.write("x,y,density\n")
            for (px, py), dv in zip(pts, dens):
                fh.write(f"{float(px)!r},{float(py)!r},{float(dv)!r}\n")
    click.echo(f"K_hat={part.n_clusters}; mode basin sizes: "
               + ", ".join(str(m.basin_size) for m in part.modes))


@main.command("simulate")
@click.argument("plan_file", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output-dir", default=None,
              help="Where to write results.csv and summary.json; falls back to "
                   "the plan's output_dir key, then the working directory.")
def cmd_simulate(plan_file, output_dir):
    """Run the Monte Carlo study described by a key=value plan file."""
    try:
        kwargs = edio.parse_plan_file(plan_file)
        output_dir = output_dir or kwargs.pop("output_dir", ".")
        kwargs.pop("output_dir", None)
        plan = ExperimentPlan(**kwargs)
    except (ValueError, TypeError) as exc:
        raise click.UsageError(str(exc)) from exc
    rows = run_experiment(plan)
    out = _ensure_outdir(output_dir)
    edio.write_results_csv(rows, os.path.join(out, "results.csv"))
    edio.write_json(edio.summarize_results(rows), os.path.join(out, "summary.json"))
    failed = sum(1 for r in rows if r.get("ise") is None)
    click.echo(f"{len(rows)} result rows ({failed} failed cells)")


@main.command("evaluate")
@click.argument("partition_json", type=click.Path(exists=True, dir_okay=False))
@click.argument("truth_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output-dir", default=".", show_default=True)
@click.option("--header/--no-header", default=True, show_default=True,
              help="Whether the truth CSV has a header line.")
def cmd_evaluate(partition_json, truth_csv, output_dir, header):
    """Score a partition against reference labels (ARI, contingency table)."""
    part = _read_json(partition_json)
    labels = np.asarray(part.get("labels", []), dtype=int)
    try:
        truth = edio.read_label_csv(truth_csv, header=header)
    except edio.CsvError as exc:
        raise click.UsageError(str(exc)) from exc
    if labels.size != truth.size:
        raise click.UsageError(
            f"label length mismatch: partition has {labels.size}, truth has {truth.size}"
        )
    table = ContingencyTable.from_labels(truth, labels)
    obj = {
        "schema_version": 1,
        "ari": adjusted_rand_index(truth, labels),
        "k_hat": int(np.unique(labels).size),
        "k_true": int(np.unique(truth).size),
        "contingency": {
            "rows": [str(v) for v in table.row_labels],
            "columns": [str(v) for v in table.col_labels],
            "counts": table.counts.tolist(),
        },
    }
    out = _ensure_outdir(output_dir)
    edio.write_json(obj, os.path.join(out, "metrics.json"))
    click.echo(f"ARI={obj['ari']:.3f}  K_hat={obj['k_hat']}  K_true={obj['k_true']}")


@main.command("report")
@click.argument("results_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output-dir", default=".", show_default=True)
def cmd_report(results_csv, output_dir):
    """Aggregate a results CSV into the summary JSON layout."""
    rows = []
    with open(results_csv) as fh:
        reader = _csv.DictReader(fh)
        if reader.fieldnames != list(edio.RESULT_COLUMNS):
            raise click.UsageError(
                f"{results_csv}: expected columns {','.join(edio.RESULT_COLUMNS)}"
            )
        for rec in reader:
            rows.append(
                {
                    "scenario": rec["scenario"],
                    "n": int(rec["n"]),
                    "method": rec["method"],
                    "replicate": int(rec["replicate"]),
                    "ise": float(rec["ise"]) if rec["ise"] else None,
                    "ari": float(rec["ari"]) if rec["ari"] else None,
                    "k_hat": int(rec["k_hat"]) if rec["k_hat"] else None,
                    "lam": float(rec["lambda"]) if rec["lambda"] else None,
                    "seed": int(rec["seed"]),
                }
            )
    summary = edio.summarize_results(rows)
    out = _ensure_outdir(output_dir)
    edio.write_json(summary, os.path.join(out, "summary.json"))
    for scen, per_n in summary["tables"].items():
        for n, methods in per_n.items():
            for method, entry in methods.items():
                if "ari_mean" in entry:
                    click.echo(
                        f"{scen} n={n} {method}: MISEx1000 "
                        f"{entry['mise_x1000_mean']:.3f} ({entry['mise_x1000_sd']:.3f})  "
                        f"ARI {entry['ari_mean']:.3f} ({entry['ari_sd']:.3f})"
                    )


if __name__ == "__main__":
    main()
