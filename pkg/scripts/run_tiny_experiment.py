#!/usr/bin/env python3
"""End-to-end desk-scale walkthrough: synthesize a dataset, train the
dual-branch tiny model, evaluate the test split, and export heatmaps for a
few test samples.  Everything lands under --out (default ./runs/tiny)."""

import argparse
import json
import sys
from pathlib import Path

from aresnet_vit.cli import main as cli


def run(out_root: Path, seed: int) -> int:
    out_root.mkdir(parents=True, exist_ok=True)
    config = {
        "dataset": {"kind": "synth", "root": None, "synth_seed": seed, "per_class": 24, "size": 48},
        "variant": "aresnet-vit",
        "scale": "tiny",
        "seed": seed,
        "out_dir": str(out_root / "train"),
        "threshold": 0.5,
        "batch_size": 4,
        "max_epochs": 30,
        "patience": 10,
        "lr": 0.002,
        "beta1": 0.9,
        "beta2": 0.999,
        "adam_eps": 1e-8,
    }
    cfg_path = out_root / "experiment.json"
    cfg_path.write_text(json.dumps(config, indent=2) + "\n")

    if cli(["train", "--config", str(cfg_path)]) != 0:
        return 1
    ckpt = str(out_root / "train" / "checkpoint.ckpt")
    if cli(["evaluate", "--checkpoint", ckpt]) != 0:
        return 1

    split = json.loads((out_root / "train" / "split.json").read_text())
    ids = ",".join(split["test"][:3])
    for method in ("grad-cam", "attention-rollout"):
        code = cli(["heatmap", "--checkpoint", ckpt, "--ids", ids,
                    "--method", method, "--out", str(out_root / "heatmaps")])
        if code != 0:
            return code
    print(f"\nartifacts under {out_root}/")
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/tiny")
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args()
    sys.exit(run(Path(args.out), args.seed))
