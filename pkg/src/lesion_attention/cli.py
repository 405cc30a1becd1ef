"""Command-line interface."""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import checkpoint_load, checkpoint_save
from .data.augment import AugmentConfig
from .data.dataset import directory_hash, load_dataset, write_dataset
from .data.netpbm import load_ppm
from .data.synthetic import ARTIFACT_KINDS, GenConfig, generate_dataset
from .errors import LesionAttentionError
from .evaluation import evaluate, export_heatmap
from .geometry import BoundingBox
from .training import TrainConfig, cross_validate, inner_split, train

log = logging.getLogger("lesion_attention")


def _box(text):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"box must be X,Y,X,Y numbers, got {text!r}")
    if len(vals) != 4:
        raise argparse.ArgumentTypeError(f"box needs 4 values, got {len(vals)}")
    return BoundingBox(*vals)


def _write_json(obj, path):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _train_config(args):
    cfg = TrainConfig(seed=args.seed, lam=args.lam)
    overrides = {
        "epochs": args.epochs, "batch_size": args.batch, "learning_rate": args.lr,
        "patience": args.patience, "jaccard_variant": args.jaccard, "precision": args.precision,
        "input_side": args.input_side,
    }
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    if args.no_augment:
        cfg = replace(cfg, augment=AugmentConfig.off())
    if args.no_attention:
        cfg = replace(cfg, attention=False)
    return cfg


def cmd_gen_data(args):
    cfg = GenConfig(n_samples=args.n, image_side=args.side, melanoma_fraction=args.mel_frac,
                    artifact_correlation=args.artifact_corr, seed=args.seed,
                    artifact_kinds=tuple(args.kinds.split(",")))
    samples = generate_dataset(cfg)
    write_dataset(samples, args.out, cfg.to_dict())
    print(directory_hash(args.out))


def cmd_train(args):
    cfg = _train_config(args)
    samples = load_dataset(args.data)
    fit, val = inner_split(samples, cfg.seed)
    result = train(fit, val, cfg)
    checkpoint_save(result.checkpoint, args.out)
    log_path = args.log or str(args.out) + ".csv"
    Path(log_path).write_text(result.log_csv(), encoding="utf-8")
    meta = result.checkpoint.metadata
    print(f"best epoch {meta['best_epoch']} val_auc {meta['best_val_auc']:.4f}")


def cmd_cross_validate(args):
    cfg = _train_config(args)
    samples = load_dataset(args.data)
    reports, summary = cross_validate(samples, args.folds, cfg)
    _write_json({"summary": summary, "folds": [r.to_dict() for r in reports],
                 "train_config": cfg.to_dict()}, args.report)
    print(json.dumps(summary, sort_keys=True))


def cmd_eval(args):
    ckpt = checkpoint_load(args.ckpt)
    report = evaluate(ckpt, load_dataset(args.data))
    Path(args.report).write_text(report.to_json(), encoding="utf-8")
    print(json.dumps({"auc": report.auc, "cam_concentration_mean": report.cam_concentration_mean,
                      "score_separation": report.score_separation}, sort_keys=True))


def cmd_cam(args):
    ckpt = checkpoint_load(args.ckpt)
    image = load_ppm(args.image)
    export_heatmap(ckpt, image, args.out, box=args.box, overlay_path=args.overlay, native=args.native)


def _add_train_flags(p):
    p.add_argument("--data", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=0.66)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--jaccard", choices=["literal", "standard"], default=None)
    p.add_argument("--precision", type=int, choices=[32, 64], default=None)
    p.add_argument("--input-side", type=int, default=None)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--no-attention", action="store_true", help="remove the attention branch entirely")


def build_parser():
    parser = argparse.ArgumentParser(prog="lesion-attn", description=__doc__)
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic leakage dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--mel-frac", type=float, default=0.3)
    p.add_argument("--artifact-corr", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kinds", default=",".join(ARTIFACT_KINDS))
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model")
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="per-epoch CSV (default: <out>.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cross-validate", help="stratified k-fold cross-validation")
    _add_train_flags(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_cross_validate)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cam", help="export a CAM heatmap")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--box", type=_box, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--overlay", default=None)
    p.add_argument("--native", action="store_true", help="write at feature-map resolution")
    p.set_defaults(func=cmd_cam)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except LesionAttentionError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return 9
    return 0


if __name__ == "__main__":
    sys.exit(main())
