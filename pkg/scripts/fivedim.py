"""5-D toy: train on 10,000 points, compare predicted and true sigma on fresh points.

Writes a 2-D histogram (sigma_true, sigma_pred) as CSV for a density plot.
Usage: python3 scripts/fivedim.py [--out results/5d] [--fresh 100000]
"""

import argparse
import json
from pathlib import Path

import numpy as np

from calibra.datasets import gen_toy, write_columns
from calibra.estimators import fit_network, predict_sigma, save_model
from calibra.optim import OptimOptions
from calibra.reliability import calibration_error_of

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/5d")
    ap.add_argument("--fresh", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    train, val = gen_toy("5D", 10_000, args.seed), gen_toy("5D", 2_500, args.seed + 1)
    x = np.vstack([train.x, val.x])
    eps = np.concatenate([train.y - train.true_mean, val.y - val.true_mean])
    model, _ = fit_network(x, eps, (np.arange(10_000), np.arange(10_000, 12_500)),
                           OptimOptions(max_iters=2000, seed=args.seed, restarts=5))
    save_model(model, out / "model.json")

    fresh = gen_toy("5D", args.fresh, args.seed + 2)
    pred = predict_sigma(model, fresh.x)
    r = float(np.corrcoef(pred, fresh.true_sigma)[0, 1])
    edges = np.linspace(0.0, 1.2, 61)
    h, _, _ = np.histogram2d(fresh.true_sigma, pred, bins=[edges, edges])
    centers = 0.5 * (edges[:-1] + edges[1:])
    tt, pp = np.meshgrid(centers, centers, indexing="ij")
    write_columns(out / "density.csv", {"sigma_true": tt.ravel(), "sigma_pred": pp.ravel(), "count": h.ravel()})
    cal = calibration_error_of(fresh.y - fresh.true_mean, pred)
    (out / "summary.json").write_text(json.dumps({"pearson": r, "cal_err_pct": cal, "n_fresh": args.fresh}, indent=1))
    print(f"pearson {r:.4f}  cal err {cal:.2f}%")
