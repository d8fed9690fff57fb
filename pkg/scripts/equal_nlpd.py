"""Two sigma models with identical mean NLPD but different calibration.

Writes both reliability diagrams and the two sigma curves as CSV.
Usage: python3 scripts/equal_nlpd.py [--out results/equal_nlpd] [--n 1000] [--seed 0]
"""

import argparse
from pathlib import Path

import numpy as np

from calibra.datasets import write_columns
from calibra.reliability import calibration_error, equal_nlpd_sigma, pit_values, reliability_diagram
from calibra.scores import nlpd

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/equal_nlpd")
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(args.seed)
    x = rng.uniform(size=args.n)
    sig = x + 0.5
    eps = rng.normal(0.0, sig)
    alt = equal_nlpd_sigma(eps, sig)
    order = np.argsort(x)
    write_columns(out / "sigma.csv", {"x": x[order], "eps": eps[order], "sigma_true": sig[order],
                                      "sigma_equal_nlpd": alt[order]})
    for name, s in (("true", sig), ("equal_nlpd", alt)):
        d = reliability_diagram(pit_values(eps, s))
        write_columns(out / f"reliability_{name}.csv", {"predicted_prob": d.predicted, "observed_freq": d.observed})
        print(f"{name:>11}: mean NLPD {np.mean(nlpd(eps, s)):.6f}  cal err {calibration_error(d):.2f}%")
