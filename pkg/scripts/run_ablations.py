#!/usr/bin/env python3
"""Regenerate both ablation tables on a shared synthetic dataset.

Every variant in a suite trains on the same split with the same seed, so
row differences reflect architecture only.  Prints both suite CSVs when done.
"""

import argparse
import json
import sys
from pathlib import Path

from aresnet_vit.cli import main as cli


def run(out_root: Path, seed: int, per_class: int, epochs: int) -> int:
    out_root.mkdir(parents=True, exist_ok=True)
    config = {
        "dataset": {"kind": "synth", "root": None, "synth_seed": seed,
                    "per_class": per_class, "size": 48},
        "variant": "aresnet-vit",
        "scale": "tiny",
        "seed": seed,
        "out_dir": "",
        "threshold": 0.5,
        "batch_size": 4,
        "max_epochs": epochs,
        "patience": 20,
        "lr": 0.002,
        "beta1": 0.9,
        "beta2": 0.999,
        "adam_eps": 1e-8,
    }
    worst = 0
    for suite in ("attention", "architecture"):
        config["out_dir"] = str(out_root / suite)
        cfg_path = out_root / f"{suite}.json"
        cfg_path.write_text(json.dumps(config, indent=2) + "\n")
        code = cli(["ablate", "--suite", suite, "--config", str(cfg_path)])
        worst = max(worst, code)
    for suite in ("attention", "architecture"):
        csv_path = out_root / suite / f"suite_{suite}.csv"
        if csv_path.is_file():
            print(f"\n== {csv_path}")
            print(csv_path.read_text())
    return worst


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/ablations")
    ap.add_argument("--seed", type=int, default=23)
    ap.add_argument("--per-class", type=int, default=24)
    ap.add_argument("--epochs", type=int, default=20)
    args = ap.parse_args()
    sys.exit(run(Path(args.out), args.seed, args.per_class, args.epochs))
