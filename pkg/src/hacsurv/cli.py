"""Command line pipeline: synthesise, fit, predict, evaluate and sample.

Each subcommand reads and writes plain CSV/JSON files. Outputs record the
seed and a SHA-256 of the resolved configuration together with the digests
of the input files, so reruns can be audited and compared byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import io
from .generators import ParametricGenerator, generator_from_dict
from .hac import copula_from_dict, kendall_tau_exact
from .marginals import WeibullCoxMarginals, marginals_from_dict
from .metrics import PredictionGrid, choose_risk_score, evaluate, km_censoring, predict, quantile_grid
from .sampling import SyntheticSpec, default_spec, generate_synthetic, sample_copula
from .training import (
    Blueprint,
    TrainConfig,
    config_hash,
    fit,
    fit_inner_regeneration,
    fit_pairwise,
    select_structure,
    split_train_val,
)

__all__ = ["main", "run", "build_parser"]


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _provenance(args, resolved: dict, inputs: list) -> str:
    return config_hash({"command": args.command, "config": resolved, "inputs": [_digest(p) for p in inputs]})


def _train_config(args) -> TrainConfig:
    over = io.read_json(args.config) if args.config else {}
    over.pop("seed", None)
    over.pop("config_sha256", None)
    cfg = TrainConfig.desk(**over) if args.preset == "desk" else TrainConfig(**over)
    cfg.seed = args.seed
    if getattr(args, "variant", None):
        cfg.variant = args.variant
    return cfg


def _generator_payload(d: dict) -> dict:
    """Accept a bare generator dict or any file that wraps one under 'generator'."""
    return d["generator"] if "generator" in d and isinstance(d["generator"], dict) else d


def _log_time(args, label: str, t0: float) -> None:
    print(f"{label}: {time.perf_counter() - t0:.2f} s", file=sys.stderr)


# --------------------------------------------------------------------------- subcommands


def cmd_synth(args) -> None:
    if args.spec == "default":
        spec = default_spec(seed=args.seed)
    else:
        d = io.read_json(args.spec)
        d["seed"] = args.seed
        spec = SyntheticSpec.from_dict(d)
    if args.n is not None:
        spec.n = args.n
    spec_d = spec.to_dict()
    h = _provenance(args, spec_d, [])
    ds = generate_synthetic(spec)
    io.write_dataset_csv(args.out, ds, {"seed": args.seed, "config_sha256": h})
    truth = ds.truth.to_dict() if ds.truth is not None else None
    sidecar = {"spec": spec_d, "truth_marginals": truth, "event_fractions": ds.metadata["event_fractions"], "covariate_law": "uniform[0,1]"}
    io.write_json(_sidecar(args.out), sidecar, args.seed, h)


def _sidecar(out) -> Path:
    p = Path(out)
    return p.with_name(p.stem + ".meta.json")


def cmd_fit_pairwise(args) -> None:
    cfg = _train_config(args)
    h = _provenance(args, cfg.to_dict(), [args.data])
    ds = io.read_dataset_csv(args.data)
    t0 = time.perf_counter()
    res = fit_pairwise(ds, tuple(args.pair), cfg)
    _log_time(args, "fit-pairwise", t0)
    out = {
        "pair": list(res.pair),
        "tau": res.tau,
        "val_nll": res.val_nll,
        "generator": res.generator.to_dict(),
        "marginals": res.marginals.to_dict(),
        "val_trace": res.record.val_nll,
        "config": cfg.to_dict(),
    }
    io.write_json(args.out, out, args.seed, h)


def cmd_select_structure(args) -> None:
    d = io.read_json(args.taus)
    taus = d["taus"] if isinstance(d, dict) else d
    if isinstance(d, dict) and "taus" not in d:
        raise io.SchemaError(f"{args.taus}: missing field 'taus'")
    h = _provenance(args, {"threshold": args.threshold}, [args.taus])
    bp = select_structure(np.asarray(taus, dtype=float), args.threshold)
    io.write_json(args.out, {"blueprint": bp.to_dict(), "threshold": args.threshold}, args.seed, h)


def cmd_fit_inner(args) -> None:
    cfg = _train_config(args)
    h = _provenance(args, cfg.to_dict(), [args.outer, args.target])
    outer = generator_from_dict(_generator_payload(io.read_json(args.outer)))
    target = generator_from_dict(_generator_payload(io.read_json(args.target)))
    t0 = time.perf_counter()
    inner, rec = fit_inner_regeneration(outer, target, cfg, seed=args.seed)
    _log_time(args, "fit-inner", t0)
    out = {
        "generator": inner.to_dict(),
        "outer": outer.to_dict(),
        "tau_target": rec.info["tau_target"],
        "tau_fitted": rec.info["tau_fitted"],
        "val_trace": rec.val_nll,
    }
    io.write_json(args.out, out, args.seed, h)


def cmd_fit(args) -> None:
    cfg = _train_config(args)
    h = _provenance(args, {**cfg.to_dict(), "grid_points": args.grid_points}, [args.data])
    ds = io.read_dataset_csv(args.data)
    train, val = split_train_val(ds, cfg.val_fraction, cfg.seed * 1009 + 5)
    t0 = time.perf_counter()
    fm = fit(train, cfg, val)
    _log_time(args, "fit", t0)
    grid = quantile_grid(train.time, args.grid_points)
    risk = choose_risk_score(predict(fm.copula, fm.marginals, val.x, grid), val)
    bundle = {
        "variant": fm.variant,
        "copula": fm.copula.to_dict(),
        "marginals": fm.marginals.to_dict(),
        "grid": grid.tolist(),
        "risk_score": risk,
        "config": cfg.to_dict(),
    }
    io.write_json(args.out, bundle, args.seed, h)
    report = fm.report.to_dict()
    if not args.record_time:
        report.pop("wall_clock_s", None)
    report["risk_score"] = risk
    report_path = args.report or Path(args.out).with_name(Path(args.out).stem + ".report.json")
    io.write_json(report_path, report, args.seed, h)


def _load_bundle(path):
    b = io.read_json(path)
    for field in ("copula", "marginals", "grid"):
        if field not in b:
            raise io.SchemaError(f"{path}: missing field {field!r}")
    return b, copula_from_dict(b["copula"]), marginals_from_dict(b["marginals"])


def cmd_predict(args) -> None:
    h = _provenance(args, {"grid_points": args.grid_points}, [args.model, args.covariates])
    b, cop, marg = _load_bundle(args.model)
    x = io.read_covariates_csv(args.covariates)
    grid = np.asarray(b["grid"], dtype=float)
    if args.grid_points is not None:
        grid = np.geomspace(grid[0], grid[-1], args.grid_points) if args.grid_points > 1 else grid[-1:]
    pred = predict(cop, marg, x, grid)
    header = ["subject", "event", "quantity"] + [repr(float(t)) for t in grid]

    def rows():
        for i in range(x.shape[0]):
            for k in range(cop.dim):
                yield [i, k, "survival", *pred.survival[i, k]]
                yield [i, k, "cif", *pred.cif[i, k]]

    meta = {"seed": args.seed, "config_sha256": h, "risk_score": b.get("risk_score", "cif")}
    io.write_csv(args.out, header, rows(), meta)


def _read_predictions(path) -> tuple[dict, PredictionGrid]:
    meta, header, rows = io.read_csv(path)
    if header[:3] != ["subject", "event", "quantity"]:
        raise io.SchemaError(f"{path}: line 2: header must start with subject,event,quantity")
    try:
        times = np.array([float(h) for h in header[3:]])
    except ValueError:
        raise io.SchemaError(f"{path}: header grid times must be numbers") from None
    recs = {}
    n_sub = n_ev = 0
    for lineno, f in rows:
        if len(f) != len(header):
            raise io.SchemaError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(f)}")
        if f[2] not in ("survival", "cif"):
            raise io.SchemaError(f"{path}: line {lineno}: field 'quantity' must be survival or cif")
        try:
            i, k = int(f[0]), int(f[1])
            vals = np.array([float(v) for v in f[3:]])
        except ValueError:
            raise io.SchemaError(f"{path}: line {lineno}: non-numeric value") from None
        recs[(i, k, f[2])] = vals
        n_sub, n_ev = max(n_sub, i + 1), max(n_ev, k + 1)
    arrs = {}
    for q in ("survival", "cif"):
        a = np.full((n_sub, n_ev, times.size), np.nan)
        for (i, k, qq), v in recs.items():
            if qq == q:
                a[i, k] = v
        if np.isnan(a).any():
            raise io.SchemaError(f"{path}: missing {q} rows for some subject/event pairs")
        arrs[q] = a
    return meta, PredictionGrid(times, arrs["survival"], arrs["cif"])


def cmd_eval(args) -> None:
    inputs = [args.predictions, args.data] + ([args.truth] if args.truth else []) + ([args.censoring_data] if args.censoring_data else [])
    h = _provenance(args, {}, inputs)
    meta, pred = _read_predictions(args.predictions)
    ds = io.read_dataset_csv(args.data, n_events=pred.survival.shape[1])
    if len(ds) != pred.survival.shape[0]:
        raise io.SchemaError(f"{args.predictions}: {pred.survival.shape[0]} subjects but {args.data} has {len(ds)} rows")
    cens = io.read_dataset_csv(args.censoring_data) if args.censoring_data else ds
    g_hat = km_censoring(cens.time, cens.event)
    truth = None
    if args.truth:
        t = io.read_json(args.truth).get("truth_marginals")
        if t is None:
            raise io.SchemaError(f"{args.truth}: missing field 'truth_marginals'")
        truth = WeibullCoxMarginals(t["shapes"], t["scales"], t["betas"])
    risk = args.risk_score or meta.get("risk_score", "cif")
    report = evaluate(pred, ds, g_hat, truth, risk)
    report["options"] = {"risk_score": risk, "censoring_data": args.censoring_data, "truth": args.truth}
    io.write_json(args.out, report, args.seed, h)


def cmd_sample_copula(args) -> None:
    if args.copula == "default":
        from .sampling import default_copula

        cop = default_copula()
        inputs = []
    else:
        d = io.read_json(args.copula)
        cop = copula_from_dict(d["copula"] if "copula" in d and isinstance(d["copula"], dict) else d)
        inputs = [args.copula]
    h = _provenance(args, {"n": args.n}, inputs)
    u = sample_copula(cop, args.n, args.seed)
    io.write_csv(args.out, [f"u{i}" for i in range(cop.dim)], u, {"seed": args.seed, "config_sha256": h})


# --------------------------------------------------------------------------- parser


_INPUTS = ("data", "taus", "outer", "target", "model", "covariates", "predictions", "truth", "censoring_data", "config", "spec", "copula")


def _validate_paths(args) -> None:
    """Fail before any work if an input is missing or an output directory does not exist."""
    for name in _INPUTS:
        v = getattr(args, name, None)
        if v is None or v == "default":
            continue
        if not Path(v).is_file():
            raise FileNotFoundError(f"--{name.replace('_', '-')}: no such file {v}")
    for name in ("out", "report"):
        v = getattr(args, name, None)
        if v is not None and not Path(v).resolve().parent.is_dir():
            raise FileNotFoundError(f"--{name}: directory {Path(v).parent} does not exist")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hacsurv", description="Hierarchical copula competing-risks survival pipeline.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, train=False):
        sp.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        sp.add_argument("--out", required=True, help="output path")
        if train:
            sp.add_argument("--config", help="JSON file of training settings overriding the preset")
            sp.add_argument("--preset", choices=("desk", "full"), default="desk", help="base settings (default desk)")

    s = sub.add_parser("synth", help="generate the synthetic competing-risks dataset")
    s.add_argument("--spec", default="default", help="'default' or a SyntheticSpec JSON file")
    s.add_argument("--n", type=int, help="override the row count")
    common(s)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("fit-pairwise", help="fit a bivariate copula between two event labels")
    s.add_argument("--data", required=True)
    s.add_argument("--pair", type=int, nargs=2, required=True, metavar=("I", "J"))
    common(s, train=True)
    s.set_defaults(func=cmd_fit_pairwise)

    s = sub.add_parser("select-structure", help="choose a two-level copula layout from a Kendall tau matrix")
    s.add_argument("--taus", required=True, help="JSON file with a 'taus' matrix")
    s.add_argument("--threshold", type=float, default=0.05, help="|tau| below which labels count as independent")
    common(s)
    s.set_defaults(func=cmd_select_structure)

    s = sub.add_parser("fit-inner", help="re-generate an inner generator nested in a fixed outer one")
    s.add_argument("--outer", required=True, help="generator JSON (or fit-pairwise output)")
    s.add_argument("--target", required=True, help="generator JSON (or fit-pairwise output)")
    common(s, train=True)
    s.set_defaults(func=cmd_fit_inner)

    s = sub.add_parser("fit", help="fit a full model bundle")
    s.add_argument("--data", required=True)
    s.add_argument("--variant", choices=("independent", "symmetric", "hierarchical"), default="hierarchical")
    s.add_argument("--grid-points", type=int, default=100, help="size of the stored quantile time grid")
    s.add_argument("--report", help="FitReport path (default <out>.report.json)")
    s.add_argument("--record-time", action="store_true", help="store wall-clock time in the report")
    common(s, train=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("predict", help="survival and CIF curves for covariate rows")
    s.add_argument("--model", required=True, help="bundle written by fit")
    s.add_argument("--covariates", required=True, help="CSV with x0..x{D-1} columns")
    s.add_argument("--grid-points", type=int, help="resample the bundle grid to N log-spaced points")
    common(s)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", help="C-td, IBS and Survival-L1 for a predictions file")
    s.add_argument("--predictions", required=True)
    s.add_argument("--data", required=True, help="dataset CSV with the same rows as the predictions")
    s.add_argument("--truth", help="sidecar JSON written by synth (enables Survival-L1)")
    s.add_argument("--censoring-data", help="dataset used for the censoring Kaplan-Meier (default --data)")
    s.add_argument("--risk-score", choices=("cif", "survival"), help="score used for C-td")
    common(s)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sample-copula", help="draw u-samples from a copula JSON or bundle")
    s.add_argument("--copula", required=True, help="copula JSON, model bundle, or 'default'")
    s.add_argument("--n", type=int, required=True)
    common(s)
    s.set_defaults(func=cmd_sample_copula)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    torch.set_num_threads(1)
    try:
        _validate_paths(args)
        args.func(args)
    except io.SchemaError as exc:
        print(f"error: schema: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - one parsable line for any failure
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
