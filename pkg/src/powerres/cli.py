"""Command-line experiment runner.

    powerres interpolate     --config run.cfg [--set key=value ...]
    powerres pinn-burgers    --config run.cfg [--set key=value ...]
    powerres gen-burgers-ref --config run.cfg [--set key=value ...]
    powerres suite           --config run.cfg [--set key=value ...]
    powerres keys            # list config keys with defaults

Exit codes: 0 success, 2 configuration/input error, 3 training failure.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import os
import sys
import tempfile
import time
from collections import defaultdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .burgers import (LambdaPair, load_reference_csv, make_problem, reference_grid, solve_inverse,
                      to_network_inputs, write_reference_csv)
from .config import ConfigError, describe, load_config, render
from .core import ContractError, RngStream, flatten, tune_allocator, unflatten
from .data import (DataFormatError, TEST_FUNCTIONS, apply_normalizer, fit_normalizer, function_datasets,
                   load_csv_dataset, point_cloud_dataset, split)
from .diagnostics import export_histograms_csv, export_loss_csv, export_norms_csv
from .metrics import evaluate
from .network import ArchitectureSpec, init_params, predict, save_checkpoint
from .training import DiagnosticsSettings, OptimizerSettings, train_interpolation

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRAINING = 3

MANIFEST = "manifest.json"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _json_safe(v):
    if isinstance(v, float):
        return v if math.isfinite(v) else None
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, np.generic):
        return _json_safe(v.item())
    return v


def write_json_atomic(path, doc) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(_json_safe(doc), fh, indent=2, sort_keys=True, allow_nan=False)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _settings(cfg) -> OptimizerSettings:
    return OptimizerSettings(cfg["optimizer"], cfg["lr"], cfg["adam_iters"], cfg["max_iter"],
                             cfg["grad_tol"], cfg["f_change_tol"], cfg["history_size"])


def _spec(cfg, input_dim) -> ArchitectureSpec:
    return ArchitectureSpec.uniform(cfg["arch"], input_dim, cfg["n_layers"], cfg["n_neurons"],
                                    power=cfg["power"], activation=cfg["activation"])


def _write_rows(path, header, columns) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(v)) for v in row])


def _manifest(task, cfg, started, t0, optim=None, **body) -> dict:
    doc = {"format": "powerres-manifest", "version": 1, "task": task, "code_version": __version__,
           "config": dict(cfg), "timing": {"started": started, "finished": _now(),
                                           "wall_s": time.perf_counter() - t0}}
    if optim is not None:
        doc.update(stop_reason=optim.stop_reason, iterations=optim.iterations, n_evals=optim.n_evals,
                   failed=optim.failed, message=optim.message)
        doc["timing"]["optimizer_s"] = optim.wall_time
    doc.update(body)
    return doc


# --- tasks ---------------------------------------------------------------------------

def _interp_data(cfg, rng):
    ds = cfg["dataset"]
    if ds in TEST_FUNCTIONS:
        return function_datasets(ds, cfg["n_train"], rng, cfg["n_val_per_dim"])
    if ds == "csv":
        full = load_csv_dataset(cfg["data_path"])
    else:
        full = point_cloud_dataset(cfg["data_path"], cfg["point_scale"], cfg["target_function"])
    return split(full, cfg["n_train"], rng)


def run_interpolate(cfg) -> dict:
    started, t0 = _now(), time.perf_counter()
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    rng = RngStream(cfg["seed"])
    train, val = _interp_data(cfg, rng.child(1))
    nz = fit_normalizer(train, cfg["normalization"])
    trn, van = apply_normalizer(train, nz), apply_normalizer(val, nz)
    spec = _spec(cfg, train.dim)
    theta0 = flatten(init_params(spec, rng.child(2)))
    diag = DiagnosticsSettings(cfg["record_norms"], cfg["hist_layers"], cfg["hist_bins"],
                               cfg["hist_epochs"] or None)
    theta, rep = train_interpolation(spec, theta0, trn, van, nz, _settings(cfg), diag, cfg["eval_every"])

    artifacts = {"loss_history": "loss_history.csv"}
    export_loss_csv(rep.loss_history, out / "loss_history.csv")
    metrics = {}
    if rep.validation is not None:
        pred = nz.targets_inverse(predict(spec, unflatten(theta, spec), van.inputs)[:, 0])
        X, y = val.inputs, val.targets
        cols = [f"x{i + 1}" for i in range(X.shape[1])]
        _write_rows(out / "predictions.csv", cols + ["y_true", "y_pred"], [*X.T, y, pred])
        _write_rows(out / "error_surface.csv", cols + ["abs_err"], [*X.T, np.abs(y - pred)])
        artifacts.update(predictions="predictions.csv", error_surface="error_surface.csv")
        metrics = {"train": rep.train.to_dict(), "validation": rep.validation.to_dict()}
        if cfg["save_checkpoint"]:
            save_checkpoint(out / "checkpoint.json", spec, unflatten(theta, spec), {"normalizer": nz.to_dict()})
            artifacts["checkpoint"] = "checkpoint.json"
    if cfg["record_norms"]:
        export_norms_csv(rep.norms, out / "norms.csv")
        artifacts["norms"] = "norms.csv"
    by_epoch = defaultdict(list)
    for h in rep.histograms:
        by_epoch[h.epoch].append(h)
    for epoch, hs in sorted(by_epoch.items()):
        name = f"grad_hist_epoch{epoch}.csv"
        export_histograms_csv(hs, out / name)
        artifacts[f"grad_hist_epoch{epoch}"] = name
    doc = _manifest("interpolate", cfg, started, t0, rep.optim, metrics=metrics, artifacts=artifacts,
                    n_train=train.n, n_validation=val.n, normalizer=nz.to_dict())
    write_json_atomic(out / MANIFEST, doc)
    return doc


def _reference(cfg):
    p = cfg["reference_path"]
    if p and Path(p).is_file():
        return load_reference_csv(p), p
    if not cfg["generate_reference"]:
        raise ConfigError("no reference solution: reference_path missing and generate_reference is false")
    return reference_grid(cfg["ref_nx"], cfg["ref_nt"], cfg["lambda2_true"], cfg["ref_nodes"]), "generated"


def run_pinn(cfg) -> dict:
    started, t0 = _now(), time.perf_counter()
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    ref, ref_source = _reference(cfg)
    rng = RngStream(cfg["seed"])
    spec = _spec(cfg, 2)
    problem = make_problem(spec, ref, cfg["n_obs"], cfg["n_col"], rng.child(1),
                           (cfg["lambda1_init"], cfg["lambda2_init"]),
                           (cfg["lambda1_true"], cfg["lambda2_true"]))
    theta0 = flatten(init_params(spec, rng.child(2)))
    lam, params, rep = solve_inverse(problem, theta0, _settings(cfg), validation=ref,
                                     eval_every=cfg["eval_every"])

    export_loss_csv(rep.loss_history, out / "loss_history.csv")
    traj = rep.extra["lambda_trajectory"]
    with (out / "lambda_trajectory.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "lambda1", "lambda2"])
        for (k, *_), (l1, l2) in zip(rep.loss_history, traj):
            w.writerow([k, repr(l1), repr(l2)])
    artifacts = {"loss_history": "loss_history.csv", "lambda_trajectory": "lambda_trajectory.csv"}
    metrics = {}
    if not rep.failed and np.all(np.isfinite(flatten(params))):
        x, t, u = ref
        pred = predict(spec, params, to_network_inputs(x, t))[:, 0]
        _write_rows(out / "predictions.csv", ["x", "t", "u_true", "u_pred"], [x, t, u, pred])
        _write_rows(out / "error_surface.csv", ["x", "t", "abs_err"], [x, t, np.abs(u - pred)])
        artifacts.update(predictions="predictions.csv", error_surface="error_surface.csv")
        metrics = {"validation": evaluate(pred, u).to_dict(),
                   "mse": rep.extra.get("mse"), "mse_u": rep.extra.get("mse_u"), "mse_g": rep.extra.get("mse_g")}
        if cfg["save_checkpoint"]:
            save_checkpoint(out / "checkpoint.json", spec, params, {"lambda": list(lam.as_tuple())})
            artifacts["checkpoint"] = "checkpoint.json"
    e1, e2 = rep.extra["lambda_percent_error"]
    doc = _manifest("pinn-burgers", cfg, started, t0, rep.optim, metrics=metrics, artifacts=artifacts,
                    reference=ref_source,
                    lambda_estimate={"lambda1": lam.lambda1, "lambda2": lam.lambda2},
                    lambda_percent_error={"lambda1": e1, "lambda2": e2})
    write_json_atomic(out / MANIFEST, doc)
    return doc


def run_gen_reference(cfg) -> dict:
    started, t0 = _now(), time.perf_counter()
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    target = Path(cfg["reference_path"]) if cfg["reference_path"] else out / "burgers_reference.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    x, t, u = reference_grid(cfg["ref_nx"], cfg["ref_nt"], cfg["lambda2_true"], cfg["ref_nodes"])
    write_reference_csv(target, x, t, u)
    doc = _manifest("gen-burgers-ref", cfg, started, t0, artifacts={"reference": os.path.relpath(target, out)},
                    n_points=int(u.size))
    write_json_atomic(out / MANIFEST, doc)
    return doc


SUITE_COLUMNS = ("arch", "n", "n_neurons", "n_layers", "optimizer", "seed", "status", "stop_reason",
                 "iterations", "mse", "rel_l2", "max_abs", "lambda1_err_pct", "lambda2_err_pct",
                 "wall_s", "run_dir")


def suite_grid(cfg) -> list:
    n_key = "n_obs" if cfg["suite_task"] == "pinn-burgers" else "n_train"
    axes = [cfg["suite_arch"] or (cfg["arch"],), cfg["suite_n"] or (cfg[n_key],),
            cfg["suite_n_neurons"] or (cfg["n_neurons"],), cfg["suite_n_layers"] or (cfg["n_layers"],),
            cfg["suite_optimizer"] or (cfg["optimizer"],), cfg["suite_seeds"] or (cfg["seed"],)]
    cells = list(itertools.product(*axes))
    if not cells:
        raise ConfigError("suite grid is empty")
    return cells


def run_suite(cfg) -> dict:
    started, t0 = _now(), time.perf_counter()
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    task = cfg["suite_task"]
    n_key = "n_obs" if task == "pinn-burgers" else "n_train"
    runner = run_pinn if task == "pinn-burgers" else run_interpolate
    rows = []
    for i, (arch, n, nn, nl, opt, seed) in enumerate(suite_grid(cfg)):
        sub = f"run{i:03d}_{arch}_n{n}_nn{nn}_nl{nl}_{opt}_s{seed}"
        rc = dict(cfg, arch=arch, n_neurons=nn, n_layers=nl, optimizer=opt, seed=seed,
                  out_dir=str(out / sub), **{n_key: n})
        row = dict(arch=arch, n=n, n_neurons=nn, n_layers=nl, optimizer=opt, seed=seed, run_dir=sub)
        try:
            doc = runner(rc)
        except (ContractError, ArithmeticError) as e:
            row.update(status="error", stop_reason=str(e))
        else:
            row.update(status="failed" if doc.get("failed") else "ok", stop_reason=doc.get("stop_reason"),
                       iterations=doc.get("iterations"), wall_s=doc["timing"]["wall_s"])
            val = doc.get("metrics", {}).get("validation") or {}
            row.update({k: val.get(k) for k in ("mse", "rel_l2", "max_abs")})
            if "lambda_percent_error" in doc:
                row.update(lambda1_err_pct=doc["lambda_percent_error"]["lambda1"],
                           lambda2_err_pct=doc["lambda_percent_error"]["lambda2"])
        rows.append(row)
        print(f"[{i + 1}] {sub}: {row['status']} max_abs={row.get('max_abs')}", file=sys.stderr)
    with (out / "comparison.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, SUITE_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in SUITE_COLUMNS})
    doc = _manifest("suite", cfg, started, t0, artifacts={"comparison": "comparison.csv"},
                    runs=len(rows), failed_runs=sum(r["status"] != "ok" for r in rows))
    write_json_atomic(out / MANIFEST, doc)
    return doc


TASKS = {"interpolate": run_interpolate, "pinn-burgers": run_pinn,
         "gen-burgers-ref": run_gen_reference, "suite": run_suite}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="powerres", description="Residual-network function approximation benchmarks")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in TASKS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    sub.add_parser("keys", help="list config keys and defaults")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "keys":
        print(describe())
        return EXIT_OK
    try:
        cfg = load_config(args.config, args.set)
    except ContractError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dump_config:
        sys.stdout.write(render(cfg))
        return EXIT_OK
    tune_allocator()
    try:
        doc = TASKS[args.command](cfg)
    except (ContractError, OSError) as e:
        # bad input files surface here, before or instead of training
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if doc.get("failed"):
        print(f"training failed: {doc.get('stop_reason')} {doc.get('message', '')}", file=sys.stderr)
        return EXIT_TRAINING
    summary = {k: doc[k] for k in ("stop_reason", "iterations", "metrics", "lambda_estimate",
                                   "lambda_percent_error", "runs", "failed_runs") if k in doc}
    print(json.dumps(_json_safe(summary), indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
