"""Command-line harness: train, evaluate, ablate, heatmap, synth.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
divergence.  Heavy imports happen after argument parsing so that --threads
can cap BLAS thread pools before numpy loads; the default of 1 keeps reruns
bitwise reproducible.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import (
    CheckpointError,
    CheckpointMismatchError,
    ConfigError,
    DataError,
    DivergenceError,
    NonFiniteError,
)

ATTENTION_SUITE = "attention"
ARCHITECTURE_SUITE = "architecture"


def _global_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="experiment config JSON")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--threads", type=int, default=1,
                        help="BLAS thread cap (default 1 for reproducibility)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arvt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a config")
    _global_flags(p_train)

    p_eval = sub.add_parser("evaluate", help="evaluate a checkpoint on a split")
    _global_flags(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--split", choices=("train", "val", "test"), default="test")

    p_abl = sub.add_parser("ablate", help="run an ablation suite")
    _global_flags(p_abl)
    p_abl.add_argument("--suite", choices=(ATTENTION_SUITE, ARCHITECTURE_SUITE), required=True)

    p_heat = sub.add_parser("heatmap", help="export heatmap PNGs for sample ids")
    _global_flags(p_heat)
    p_heat.add_argument("--checkpoint", required=True)
    p_heat.add_argument("--ids", required=True, help="comma-separated sample ids")
    p_heat.add_argument("--method", choices=("grad-cam", "attention-rollout"), default="grad-cam")

    p_synth = sub.add_parser("synth", help="write a synthetic fixture dataset")
    _global_flags(p_synth)
    p_synth.add_argument("--per-class", type=int, default=32)
    p_synth.add_argument("--size", type=int, default=64)

    return parser


def _load_config(args) -> "ExperimentConfig":
    from .config import load_experiment

    if not args.config:
        raise ConfigError("config: --config is required for this command")
    cfg = load_experiment(args.config)
    return _apply_overrides(cfg, args)


def _apply_overrides(cfg, args):
    from dataclasses import replace

    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _prepare_run(cfg):
    from .config import load_samples
    from .data import prepare
    from .fusion import model_config_for

    model_cfg = model_config_for(cfg.variant, cfg.scale)
    if cfg.threshold != model_cfg.threshold:
        from dataclasses import replace

        model_cfg = replace(model_cfg, threshold=cfg.threshold)
    samples = load_samples(cfg.dataset)
    data = prepare(samples, cfg.seed, model_cfg.input_size)
    return model_cfg, data


def _train_once(cfg, out_dir: Path) -> dict:
    """Shared by cmd_train and the ablation runner; returns output paths."""
    from .config import experiment_to_dict, write_resolved_config
    from .fusion import build_model
    from .training import fit, make_checkpoint, save_checkpoint, write_training_log_csv

    out_dir.mkdir(parents=True, exist_ok=True)
    model_cfg, data = _prepare_run(cfg)
    write_resolved_config(out_dir / "resolved_config.json", cfg)
    with open(out_dir / "split.json", "w") as fh:
        json.dump({"train": data.split.train, "val": data.split.val,
                   "test": data.split.test, "seed": data.split.seed}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    model = build_model(model_cfg, cfg.seed)
    result = fit(model, data, cfg.train_config())
    ckpt = make_checkpoint(
        model,
        config_echo=experiment_to_dict(cfg),
        normalizer=data.normalizer,
        optimizer=result.optimizer,
        split_seed=cfg.seed,
        metrics={"best_epoch": result.best_epoch, "best_val_loss": result.best_val_loss,
                 "epochs_run": len(result.log), "stopped_early": result.stopped_early},
    )
    ckpt_path = out_dir / "checkpoint.ckpt"
    save_checkpoint(ckpt_path, ckpt)
    write_training_log_csv(out_dir / "training_log.csv", result.log)
    return {"checkpoint": ckpt_path, "model": model, "data": data, "result": result}


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _train_once(cfg, Path(cfg.out_dir))
    print(f"checkpoint written to {out['checkpoint']}")
    return 0


def _restore_from_checkpoint(path):
    from .config import experiment_from_dict
    from .fusion import build_model, model_config_from_dict
    from .training import load_checkpoint, restore_model

    ckpt = load_checkpoint(path)
    cfg = experiment_from_dict(ckpt.config["experiment"])
    model_cfg = model_config_from_dict(ckpt.config["model"])
    model = build_model(model_cfg, cfg.seed)
    normalizer = restore_model(model, ckpt)
    return ckpt, cfg, model, normalizer


def cmd_evaluate(args) -> int:
    from .data import prepare
    from .config import load_samples
    from .metrics import evaluate_scores, write_report_json, write_reports_csv
    from .training import batch_probabilities

    _, cfg, model, normalizer = _restore_from_checkpoint(args.checkpoint)
    cfg = _apply_overrides(cfg, args)
    samples = load_samples(cfg.dataset)
    data = prepare(samples, cfg.seed, model.config.input_size, augment_train=False)
    subset = getattr(data, args.split)
    import numpy as np

    probs = batch_probabilities(model, subset, normalizer, cfg.batch_size)
    labels = np.array([s.label for s in subset])
    report = evaluate_scores(cfg.variant, probs, labels, model.config.threshold)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_json(out_dir / f"metrics_{args.split}.json", report)
    write_reports_csv(out_dir / f"metrics_{args.split}.csv", [report])
    print(",".join(["method", "acc", "tpr", "tnr", "auc"]))
    print(",".join(report.to_csv_row()))
    return 0


def cmd_ablate(args) -> int:
    from dataclasses import replace

    from .metrics import evaluate_scores, write_reports_csv
    from .reference import suite_variants
    from .training import batch_probabilities

    shared = _load_config(args)
    variants = suite_variants(args.suite)
    out_root = Path(shared.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    reports, failures, manifests = [], [], []
    import numpy as np

    for variant in variants:
        cfg = replace(shared, variant=variant, out_dir=str(out_root / variant))
        try:
            run = _train_once(cfg, Path(cfg.out_dir))
            data = run["data"]
            manifests.append((variant, data.split.train, data.split.val, data.split.test))
            probs = batch_probabilities(run["model"], data.test, data.normalizer, cfg.batch_size)
            labels = np.array([s.label for s in data.test])
            reports.append(evaluate_scores(variant, probs, labels, shared.threshold))
        except (ConfigError, DataError, DivergenceError, NonFiniteError) as exc:
            failures.append((variant, str(exc)))
            from .metrics import ConfusionCounts, MetricsReport

            reports.append(MetricsReport(method=variant, counts=ConfusionCounts(0, 0, 0, 0),
                                         acc=None, tpr=None, tnr=None, auc=None))
            print(f"variant {variant} failed: {exc}", file=sys.stderr)
    if manifests:
        first = manifests[0][1:]
        for variant, *rest in manifests[1:]:
            assert tuple(rest) == first, f"split drift in variant {variant}"
    suite_csv = out_root / f"suite_{args.suite}.csv"
    write_reports_csv(suite_csv, reports, with_auc=args.suite == ARCHITECTURE_SUITE)
    print(f"suite table written to {suite_csv}")
    return 1 if failures else 0


def cmd_heatmap(args) -> int:
    from .data import prepare
    from .config import load_samples
    from .heatmap import compute_heatmap, save_heatmap_png, save_overlay_png

    _, cfg, model, normalizer = _restore_from_checkpoint(args.checkpoint)
    cfg = _apply_overrides(cfg, args)
    wanted = [sid for sid in args.ids.split(",") if sid]
    samples = load_samples(cfg.dataset)
    data = prepare(samples, cfg.seed, model.config.input_size, augment_train=False)
    found = {sid: data.find(sid) for sid in wanted}
    missing = sorted(sid for sid, s in found.items() if s is None)
    if missing:
        raise DataError(f"unknown sample ids: {', '.join(missing)}")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for sid in wanted:
        sample = found[sid]
        hm = compute_heatmap(model, sample, normalizer, method=args.method)
        save_heatmap_png(out_dir / f"{sid}.{args.method}.png", hm)
        save_overlay_png(out_dir / f"{sid}.{args.method}.overlay.png", hm, sample.image)
        if hm.constant:
            print(f"{sid}: constant map flagged", file=sys.stderr)
    print(f"wrote {2 * len(wanted)} PNG files to {out_dir}")
    return 0


def cmd_synth(args) -> int:
    from .data import synth_generate, write_fixture

    if not args.out:
        raise ConfigError("out: --out is required for synth")
    seed = args.seed if args.seed is not None else 0
    samples = synth_generate(seed=seed, per_class=args.per_class, size=args.size)
    try:
        write_fixture(args.out, samples)
    except OSError as exc:
        raise DataError(f"cannot write fixture to {args.out}: {exc}") from exc
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "heatmap": cmd_heatmap,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = str(max(1, args.threads))
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, threads)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CheckpointMismatchError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (DivergenceError, NonFiniteError) as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
