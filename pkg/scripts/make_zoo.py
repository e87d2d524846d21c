"""Regenerate the committed model zoo (src/mixgrad/data/zoo.json).

The zoo is versioned: rerunning this script with the default seed must
reproduce the committed file byte for byte.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "mixgrad" / "data" / "zoo.json"


def build(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    models = {}
    for family in ("gaussian", "logistic"):
        for K in (1, 2, 3, 5):
            for D in (1, 2, 3, 8):
                mu = np.round(rng.uniform(-2.5, 2.5, size=(K, D)), 6)
                sigma = np.round(rng.uniform(0.6, 1.6, size=(K, D)), 6)
                logits = np.round(rng.normal(0.0, 0.6, size=K), 6)
                models[f"{family}-K{K}-D{D}"] = {
                    "K": K,
                    "D": D,
                    "logits": logits.tolist(),
                    "components": [
                        {"family": family, "mu": mu[k].tolist(), "sigma": sigma[k].tolist()} for k in range(K)
                    ],
                }
    return {"version": 1, "seed": seed, "models": models}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=20160522)
    ap.add_argument("-o", "--output", type=Path, default=OUT)
    args = ap.parse_args()
    args.output.write_text(json.dumps(build(args.seed), indent=1) + "\n")
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()
