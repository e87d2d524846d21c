"""Standard error of the pathwise and score-function estimators against N.

Runs both estimators on the two-bump benchmark (K=2, D=1, means -1 and +1,
unit scales, equal weights) with g(x) = x and prints a table of standard
errors plus the ratio between consecutive sample sizes.

    python scripts/variance_sweep.py --n-list 100,10000,1000000 --csv sweep.csv
"""

from __future__ import annotations

import argparse
import csv
import io
from pathlib import Path

from mixgrad.cli import ExperimentConfig, variance_sweep
from mixgrad.mixture import MixtureModel, model_to_dict

BENCH = MixtureModel.create([[-1.0], [1.0]], 1.0, weights=[0.5, 0.5])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-list", default="100,10000,1000000")
    ap.add_argument("--seed", type=int, default=80)
    ap.add_argument("--loss", default="linear")
    ap.add_argument("--csv", default=None, help="also write the raw sweep CSV here")
    args = ap.parse_args()

    cfg = ExperimentConfig(model=BENCH, loss={"id": args.loss}, seed=args.seed,
                           params=["weights", "logits", "locations", "log_scales"], model_doc=model_to_dict(BENCH))
    text = variance_sweep(cfg, [int(float(s)) for s in args.n_list.split(",")])
    if args.csv:
        Path(args.csv).write_text(text)
    rows = list(csv.DictReader(io.StringIO(text)))
    cols = [c for c in rows[0] if c.startswith("se:")]
    print(f"{'estimator':<10} {'N':>9} " + " ".join(f"{c[3:]:>14}" for c in cols))
    prev = {}
    for r in rows:
        est, n = r["estimator"], int(r["N"])
        print(f"{est:<10} {n:>9} " + " ".join(f"{float(r[c]):>14.4e}" for c in cols))
        if est in prev:
            ratio = [float(prev[est][c]) / float(r[c]) if float(r[c]) > 0 else float("inf") for c in cols]
            print(f"{'':<10} {'ratio':>9} " + " ".join(f"{v:>14.2f}" for v in ratio))
        prev[est] = r


if __name__ == "__main__":
    main()
