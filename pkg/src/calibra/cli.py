"""Command-line interface: gen, fit, eval and bench.

Every command that writes a report writes versioned JSON of the form
``{version, command, provenance, splits, methods, timing_s, seeds, ...}``.
Exit status is 0 when the report was fully written, 1 when it was written
but some benchmark runs failed, and 2 on errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, meanfn, protocols
from .datasets import (
    TABULAR_STANDINS,
    TOY_DOMAINS,
    SplitSpec,
    gen_tabular,
    gen_toy,
    load_csv,
    split_indices,
    write_columns,
    write_csv,
)
from .errors import CalibraError
from .estimators import model_from_dict, model_to_dict, predict_sigma
from .optim import threads_cap
from .reliability import calibration_error, equal_nlpd_sigma, pit_values, reliability_diagram
from .scores import RsVariant, score_forecasts

log = logging.getLogger("calibra")

REPORT_VERSION = 1
MODEL_FILE_VERSION = 1


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, RsVariant):
        return v.value
    return v


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(_jsonable(obj), indent=1, allow_nan=False))
    tmp.replace(path)


def _write_rows(path, rows, keys):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(r[k])) if isinstance(r[k], (float, np.floating)) else r[k] for k in keys})


def _report(args, **fields):
    base = {"version": REPORT_VERSION, "calibra_version": __version__, "command": list(args.argv),
            "provenance": {}, "splits": None, "methods": [], "timing_s": None, "seeds": []}
    base.update(fields)
    return base


def _parse_split(text):
    try:
        parts = tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"split must be three comma-separated fractions, got {text!r}")
    return parts


def _method_row(name, eps, sigma, variant, **extra):
    bd = score_forecasts(np.zeros_like(eps), sigma, eps, variant, fallback_beta=0.5)
    row = {"name": name, "crps": bd.crps_mean, "rs": bd.rs, "ar": bd.ar, "nlpd": bd.nlpd_mean,
           "beta": bd.beta, "cal_err_pct": calibration_error(reliability_diagram(pit_values(eps, sigma))),
           "n": int(eps.size)}
    row.update(extra)
    return row


def _mean_model(kind, data, tr, va, seed):
    if kind == "exact":
        if data.true_mean is None:
            raise CalibraError("--mean exact needs a true_mean column in the data")
        return meanfn.column("true_mean")
    return protocols.fit_mean(kind, data, tr, va, seed)


# ------------------------------------------------------------------ gen


def cmd_gen(args):
    data = gen_toy(args.dataset, args.n, args.seed)
    extra = {}
    if args.equal_nlpd:
        extra["sigma_equal_nlpd"] = equal_nlpd_sigma(data.y - data.true_mean, data.true_sigma)
    write_csv(args.out, data, extra)
    log.info("wrote %d rows to %s", data.n, args.out)
    return 0


# ------------------------------------------------------------------ fit


def cmd_fit(args):
    t0 = time.perf_counter()
    variant = RsVariant(args.rs_variant)
    data = load_csv(args.data)
    spec = SplitSpec(args.split, args.seed)
    tr, va, te = split_indices(data.n, spec)
    mean = _mean_model(args.mean, data, tr, va, args.seed)
    eps = meanfn.residuals(data, mean)

    model_file = {"version": MODEL_FILE_VERSION, "mean": meanfn.mean_to_dict(mean),
                  "split": {"fractions": list(spec.fractions), "seed": spec.seed},
                  "loss": args.loss, "estimator": args.estimator, "rs_variant": variant.value,
                  "data_sha256": data.provenance["sha256"], "input_dim": data.dim}
    methods = []
    if args.estimator == "pointwise":
        sigma, _ = protocols.fit_variance("pointwise", args.loss, data.x, eps, np.arange(data.n), va,
                                          variant, args.seed)
        out = args.out_sigma or str(Path(args.out_model).with_suffix(".sigma.csv"))
        cols = {name: data.x[:, j] for j, name in enumerate(data.columns)}
        cols.update({"eps": eps, "sigma_pred": sigma})
        write_columns(out, cols)
        model_file["variance"] = None
        model_file["sigma_csv"] = out
        methods.append(_method_row(args.loss, eps, sigma, variant, partition="all"))
    else:
        model, rep = protocols.fit_variance(args.estimator, args.loss, data.x, eps, tr, va, variant, args.seed,
                                            tol=args.tol, restarts=args.restarts)
        model_file["variance"] = model_to_dict(model)
        for part, idx in (("train", tr), ("val", va), ("test", te)):
            methods.append(_method_row(args.loss, eps[idx], predict_sigma(model, data.x[idx]), variant,
                                       partition=part))
        model_file["fit_notes"] = rep.notes if rep is not None else []
    _write_json(args.out_model, model_file)
    report = _report(args, provenance=data.provenance, splits=model_file["split"], methods=methods,
                     timing_s=time.perf_counter() - t0, seeds=[args.seed],
                     artifacts={"model": args.out_model, "sigma_csv": model_file.get("sigma_csv")})
    _write_json(args.out_report, report)
    return 0


# ----------------------------------------------------------------- eval


def cmd_eval(args):
    t0 = time.perf_counter()
    variant = RsVariant(args.rs_variant)
    data = load_csv(args.data)
    split = None
    if args.model:
        mf = json.loads(Path(args.model).read_text())
        if mf.get("version") != MODEL_FILE_VERSION or mf.get("variance") is None:
            raise CalibraError(f"{args.model}: not a variance model file")
        if mf["input_dim"] != data.dim:
            raise CalibraError(f"model expects {mf['input_dim']} inputs, data has {data.dim}")
        mean = meanfn.mean_from_dict(mf["mean"])
        model = model_from_dict(mf["variance"])
        name = mf["loss"]
        split = mf["split"]
        idx = np.arange(data.n)
        if args.partition != "all":
            parts = split_indices(data.n, SplitSpec(tuple(split["fractions"]), split["seed"]))
            idx = parts[("train", "val", "test").index(args.partition)]
        sigma_of = lambda x: predict_sigma(model, x)
    else:
        col = args.sigma_column
        sig_all = data.true_sigma if col == "true_sigma" else data.extra.get(col)
        if sig_all is None:
            raise CalibraError(f"data has no sigma column {col!r} (use true_sigma or a sigma_* column)")
        if not (args.mean == "exact" or args.mean.startswith("column:")):
            raise CalibraError("--sigma-column needs --mean exact or column:NAME")
        mean = _mean_model(args.mean, data, None, None, 0)
        name = col
        idx = np.arange(data.n)
        sigma_of = None

    eps = meanfn.residuals(data, mean)[idx]
    sigma = sigma_of(data.x[idx]) if sigma_of else np.asarray(sig_all)[idx]
    row = _method_row(name, eps, sigma, variant, partition=args.partition if args.model else "all")
    if args.out_reliability:
        d = reliability_diagram(pit_values(eps, sigma))
        write_columns(args.out_reliability, {"predicted_prob": d.predicted, "observed_freq": d.observed})
    if args.out_sigma and data.dim == 1:
        order = np.argsort(data.x[idx, 0], kind="stable")
        cols = {"x": data.x[idx, 0][order]}
        if data.true_sigma is not None:
            cols["sigma_true"] = data.true_sigma[idx][order]
        cols["sigma_pred"] = sigma[order]
        write_columns(args.out_sigma, cols)
    report = _report(args, provenance=data.provenance, splits=split, methods=[row],
                     timing_s=time.perf_counter() - t0, seeds=[split["seed"]] if split else [],
                     artifacts={"reliability_csv": args.out_reliability, "sigma_csv": args.out_sigma})
    _write_json(args.out_report, report)
    return 0


# ---------------------------------------------------------------- bench


def _run_all(fn, seeds):
    workers = min(threads_cap(), len(seeds))
    out = {}

    def one(seed):
        try:
            return seed, fn(seed), None
        except Exception as exc:  # a failed run is recorded, not fatal
            log.warning("run with seed %d failed: %s", seed, exc)
            return seed, None, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    for seed, res, err in results:
        out[seed] = (res, err)
    return out


def _medians(rows, keys=("crps", "rs", "ar", "nlpd", "beta", "cal_err_pct")):
    med = {}
    for k in keys:
        vals = np.array([r[k] for r in rows], dtype=float)
        vals = vals[np.isfinite(vals)]
        med[k] = float(np.median(vals)) if vals.size else math.nan
    return med


def cmd_bench_toy(args):
    t0 = time.perf_counter()
    variant = RsVariant(args.rs_variant)
    seeds = [args.seed + r for r in range(args.runs)]
    fn = lambda s: protocols.run_toy(args.dataset, s, estimator=args.estimator, mean=args.mean, n=args.n,
                                     variant=variant, loss=args.loss, tol=args.tol, restarts=args.restarts)
    results = _run_all(fn, seeds)
    ok = [(s, r) for s, (r, e) in results.items() if r is not None]
    failures = [{"seed": s, "error": e} for s, (r, e) in results.items() if r is None]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for s, r in ok:
        row = r["test"].as_dict()
        row.update(seed=s, grid_rmse=r.get("grid_rmse", math.nan), pearson_test=r["pearson_test"])
        rows.append(row)
    keys = ["seed", "crps", "rs", "ar", "nlpd", "beta", "cal_err_pct", "grid_rmse", "pearson_test"]
    _write_rows(out_dir / "runs.csv", rows, keys)

    summary = {"name": args.loss, **_medians(rows), "runs_ok": len(ok), "runs_failed": len(failures)}
    if rows:
        summary["grid_rmse"] = float(np.nanmedian([r["grid_rmse"] for r in rows])) if TOY_DOMAINS[args.dataset][2] == 1 else None
        summary["pearson_test"] = float(np.nanmedian([r["pearson_test"] for r in rows]))
    artifacts = {"runs_csv": str(out_dir / "runs.csv")}
    if ok and TOY_DOMAINS[args.dataset][2] == 1:
        grid = ok[0][1]["grid_x"]
        band = np.array([r["grid_sigma"] for _, r in ok])
        write_columns(out_dir / "band.csv", {
            "x": grid, "sigma_true": protocols.toy_sigma(args.dataset, grid),
            "sigma_median": np.median(band, axis=0),
            "sigma_q05": np.quantile(band, 0.05, axis=0), "sigma_q95": np.quantile(band, 0.95, axis=0)})
        artifacts["band_csv"] = str(out_dir / "band.csv")
    report = _report(args, provenance={"dataset": args.dataset, "n": args.n, "rng": "numpy PCG64",
                                       "fresh_data_per_run": True},
                     splits={"fractions": list(protocols.TOY_SPLIT), "seed": "per run"},
                     methods=[summary], timing_s=time.perf_counter() - t0, seeds=seeds,
                     failures=failures, artifacts=artifacts)
    _write_json(out_dir / "report.json", report)
    _print_table([summary])
    return 1 if failures else 0


def cmd_bench_tabular(args):
    t0 = time.perf_counter()
    variant = RsVariant(args.rs_variant)
    if args.standin:
        data = gen_tabular(args.standin, args.data_seed)
    elif args.data:
        data = load_csv(args.data, {"y": args.target} if args.target else None)
    else:
        raise CalibraError("bench tabular needs --data FILE or --standin NAME")
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    seeds = [args.seed + r for r in range(args.runs)]
    fn = lambda s: protocols.run_tabular(data, s, methods=methods, variant=variant, restarts=args.restarts,
                                         kmeans_select=args.kmeans_select)
    results = _run_all(fn, seeds)
    ok = [(s, r) for s, (r, e) in results.items() if r is not None]
    failures = [{"seed": s, "error": e} for s, (r, e) in results.items() if r is None]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    per_method = {m: [] for m in methods}
    rows = []
    for s, r in ok:
        for m, res in r["methods"].items():
            d = res.as_dict()
            per_method[m].append(d)
            rows.append({"seed": s, "method": m, **d})
    _write_rows(out_dir / "runs.csv", rows, ["seed", "method", "crps", "rs", "ar", "nlpd", "beta", "cal_err_pct"])
    summary = [{"name": m, **_medians(rows), "runs_ok": len(rows), "runs_failed": len(failures)}
               for m, rows in per_method.items()]
    report = _report(args, provenance=data.provenance,
                     splits={"fractions": list(protocols.TABULAR_SPLIT), "seed": "per run (fresh split)"},
                     methods=summary, timing_s=time.perf_counter() - t0, seeds=seeds, failures=failures,
                     kmeans_select=args.kmeans_select,
                     artifacts={"runs_csv": str(out_dir / "runs.csv")})
    _write_json(out_dir / "report.json", report)
    _print_table(summary)
    return 1 if failures else 0


def _print_table(rows):
    print(f"{'method':<8} {'crps':>9} {'cal_err%':>9} {'runs':>5}")
    for r in rows:
        print(f"{r['name']:<8} {r['crps']:>9.4f} {r['cal_err_pct']:>9.2f} {r['runs_ok']:>5}")


# --------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="calibra", description="Accuracy/reliability variance estimation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--rs-variant", choices=[v.value for v in RsVariant], default="practical")
        sp.add_argument("--seed", type=int, default=0)

    g = sub.add_parser("gen", help="generate a toy dataset as CSV")
    g.add_argument("--dataset", choices=sorted(TOY_DOMAINS), required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--equal-nlpd", action="store_true",
                   help="add a sigma_equal_nlpd column with the same NLPD as the true sigma")
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fit", help="fit a mean and a variance model")
    f.add_argument("--data", required=True)
    f.add_argument("--mean", default="exact", help="exact | kernel-ridge | network | column:NAME")
    f.add_argument("--estimator", choices=["poly", "network", "pointwise"], default="poly")
    f.add_argument("--loss", choices=["ar", "crps", "nlpd"], default="ar")
    f.add_argument("--split", type=_parse_split, default=protocols.TOY_SPLIT)
    f.add_argument("--tol", type=float, default=1e-4)
    f.add_argument("--restarts", type=int, default=5)
    f.add_argument("--out-model", required=True)
    f.add_argument("--out-report", required=True)
    f.add_argument("--out-sigma", help="per-sample sigma CSV (pointwise estimator)")
    common(f)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="score a model and export reliability data")
    e.add_argument("--data", required=True)
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--model")
    src.add_argument("--sigma-column", help="evaluate sigmas stored in a data column")
    e.add_argument("--mean", default="exact", help="mean for --sigma-column (exact | column:NAME)")
    e.add_argument("--partition", choices=["train", "val", "test", "all"], default="test")
    e.add_argument("--out-report", required=True)
    e.add_argument("--out-reliability")
    e.add_argument("--out-sigma")
    common(e)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="run a benchmark protocol")
    bsub = b.add_subparsers(dest="bench", required=True)
    bt = bsub.add_parser("toy")
    bt.add_argument("--dataset", choices=sorted(TOY_DOMAINS), required=True)
    bt.add_argument("--runs", type=int, default=20)
    bt.add_argument("--estimator", choices=["poly", "network", "pointwise"], default="poly")
    bt.add_argument("--mean", choices=["exact", "kernel-ridge", "network"], default="exact")
    bt.add_argument("--loss", choices=["ar", "crps", "nlpd"], default="ar")
    bt.add_argument("--n", type=int, default=100)
    bt.add_argument("--tol", type=float, default=1e-4)
    bt.add_argument("--restarts", type=int, default=5)
    bt.add_argument("--out-dir", required=True)
    common(bt)
    bt.set_defaults(func=cmd_bench_toy)

    tb = bsub.add_parser("tabular")
    tb.add_argument("--data")
    tb.add_argument("--standin", choices=sorted(TABULAR_STANDINS))
    tb.add_argument("--data-seed", type=int, default=0, help="seed of the stand-in table")
    tb.add_argument("--target", help="target column (default: y, else the last column)")
    tb.add_argument("--runs", type=int, default=20)
    tb.add_argument("--methods", default=",".join(protocols.TABULAR_METHODS))
    tb.add_argument("--restarts", type=int, default=5)
    tb.add_argument("--kmeans-select", choices=["val", "test"], default="val")
    tb.add_argument("--out-dir", required=True)
    common(tb)
    tb.set_defaults(func=cmd_bench_tabular)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = ["calibra", *argv]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CalibraError, ValueError, OSError, KeyError) as exc:
        print(f"calibra {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
