#!/usr/bin/env python3
"""Label-calibration oracle for the synthetic dataset.

Monte-Carlo sweep used to pick the committed defaults in
edgefarm.synthdata: pre-clip marginal parameters, the need-label weight
vector, and the water-label constants. Re-running writes the measured
statistics of the committed defaults to tests/fixtures/need_label_stats.json
so tests can assert against frozen numbers.

Usage:
    python scripts/calibrate_labels.py [--sweep]

Without --sweep it only re-measures the committed defaults and rewrites
the fixture.
"""

import argparse
import itertools
import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from edgefarm.synthdata import GeneratorConfig, NEED_WEIGHTS, _generate_arrays

FIXTURE = os.path.join(os.path.dirname(__file__), "..", "tests", "fixtures", "need_label_stats.json")

MEAN_BAND = (0.435, 0.475)
SD_BAND = (0.082, 0.122)


def measure(weights, seed=7, n_rows=30001):
    cfg = GeneratorConfig(n_rows=n_rows, seed=seed, need_weights=tuple(weights))
    a = _generate_arrays(cfg)
    need = a["need"]
    lo = float((need < 0.3).mean())
    hi = float((need > 0.6).mean())
    return {
        "mean": float(need.mean()),
        "sd": float(need.std()),
        "zone_low": lo,
        "zone_medium": 1.0 - lo - hi,
        "zone_high": hi,
    }


def sweep():
    grid = {
        "deficit": [0.20, 0.22, 0.24, 0.26],
        "stress": [0.13, 0.15, 0.17],
        "et": [0.10, 0.12, 0.14],
        "light": [0.08, 0.10, 0.12],
        "ph": [0.27, 0.29, 0.31],
    }
    hits = []
    for combo in itertools.product(*grid.values()):
        s = measure(combo)
        ok = (
            MEAN_BAND[0] <= s["mean"] <= MEAN_BAND[1]
            and SD_BAND[0] <= s["sd"] <= SD_BAND[1]
            and s["zone_low"] < 0.15
            and s["zone_high"] < 0.15
            and s["zone_medium"] > 0.5
        )
        if ok:
            hits.append((combo, s))
    hits.sort(key=lambda h: abs(h[1]["mean"] - 0.455) + abs(h[1]["sd"] - 0.102))
    for combo, s in hits[:10]:
        print(combo, {k: round(v, 4) for k, v in s.items()})
    return hits


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sweep", action="store_true", help="run the full weight sweep")
    args = ap.parse_args()

    if args.sweep:
        sweep()

    stats = measure(NEED_WEIGHTS)
    doc = {
        "weights": list(NEED_WEIGHTS),
        "seed": 7,
        "n_rows": 30001,
        "measured": stats,
        "targets": {
            "mean_band": list(MEAN_BAND),
            "sd_band": list(SD_BAND),
            "zone_max_low_high": 0.15,
        },
    }
    os.makedirs(os.path.dirname(FIXTURE), exist_ok=True)
    with open(FIXTURE, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    print("committed defaults:", NEED_WEIGHTS)
    print("measured:", {k: round(v, 4) for k, v in stats.items()})
    print("fixture written:", os.path.normpath(FIXTURE))


if __name__ == "__main__":
    main()
