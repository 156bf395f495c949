"""Command-line entry points: synth, train, predict, evaluate."""

from __future__ import annotations

import argparse
import re
import sys
from dataclasses import fields
from pathlib import Path

from svsnet import __version__
from svsnet.config import ConfigError, build_train_config, load_run_config
from svsnet.head import load_embeddings, score_fusion, xvector_cosine_score
from svsnet.metrics import evaluate_system, evaluate_utterance
from svsnet.model import scalar_score
from svsnet.report import (
    read_predictions,
    render_scatter,
    write_predictions,
    write_report_csv,
    write_report_json,
)
from svsnet.signal_io import group_by_pair, parse_manifest
from svsnet.synthdata import gen_pair_dataset
from svsnet.training import PairDataset, TrainConfig, load_checkpoint, train


def _fractions(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated fractions")
    return tuple(parts)  # type: ignore[return-value]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svsnet", description=__doc__)
    parser.add_argument("--version", action="version", version=f"svsnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled pair corpus")
    p.add_argument("--pairs", type=int, required=True)
    p.add_argument("--speakers", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--duration-min", type=float, default=0.8)
    p.add_argument("--duration-max", type=float, default=1.6)
    p.add_argument("--split-fractions", type=_fractions, default=(0.8, 0.1, 0.1),
                   help="train,val,test fractions (default 0.8,0.1,0.1)")

    p = sub.add_parser("train", help="train a similarity model")
    p.add_argument("--config", type=Path, help="YAML run config; flags override it")
    p.add_argument("--train-manifest", type=Path)
    p.add_argument("--val-manifest", type=Path)
    p.add_argument("--mode", choices=("regression", "classification"))
    p.add_argument("--frontend", choices=("sinc", "spectrogram"))
    p.add_argument("--attention", choices=("co_attention", "single_sided"), dest="attention_mode")
    p.add_argument("--lr", type=float, dest="learning_rate")
    p.add_argument("--beta1", type=float, dest="adam_beta1")
    p.add_argument("--beta2", type=float, dest="adam_beta2")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint-dir", type=Path)
    p.add_argument("--validation-metric", choices=("utterance_lcc", "utterance_srcc", "utterance_mse"))
    p.add_argument("--eval-every", type=int, dest="eval_every_steps")
    p.add_argument("--patience", type=int)
    p.add_argument("--sinc-filters", type=int)
    p.add_argument("--filter-length", type=int)
    p.add_argument("--conv-channels", type=int)
    p.add_argument("--recurrent-hidden", type=int)
    p.add_argument("--head-hidden", type=int)
    p.add_argument("--feature-fusion", action="store_true", default=None)
    p.add_argument("--embeddings", type=Path, dest="embeddings_path")
    p.add_argument("--label-aggregate", choices=("label", "expected"))

    p = sub.add_parser("predict", help="score pairs with a trained checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="all")
    p.add_argument("--fusion", choices=("score", "feature"))
    p.add_argument("--embeddings", type=Path)
    p.add_argument("--fusion-weight", type=float, default=0.3,
                   help="model weight for score fusion (default 0.3)")
    p.add_argument("--label-aggregate", choices=("label", "expected"), default="label")

    p = sub.add_parser("evaluate", help="compute metrics from predictions and a manifest")
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--level", choices=("utterance", "system"), required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="all")
    p.add_argument("--mode", choices=("regression", "classification"), default="regression")
    p.add_argument("--out-dir", type=Path, help="report directory (default: next to predictions)")
    p.add_argument("--systems-filter", help="regex; keep only matching system_ids")
    p.add_argument("--no-figures", action="store_true", help="skip scatter rendering")
    return parser


def cmd_synth(args) -> int:
    if args.speakers < 2:
        raise UsageError("--speakers must be >= 2")
    if args.pairs < 8:
        raise UsageError("--pairs must be >= 8")
    if not 0.5 <= args.duration_min <= args.duration_max <= 5.0:
        raise UsageError("durations must satisfy 0.5 <= min <= max <= 5.0")
    manifest = gen_pair_dataset(
        n_pairs=args.pairs,
        n_speakers=args.speakers,
        seed=args.seed,
        out_dir=args.out,
        duration_range=(args.duration_min, args.duration_max),
        split_fractions=args.split_fractions,
    )
    print(manifest)
    return 0


def cmd_train(args) -> int:
    settings = load_run_config(args.config) if args.config else {}
    config_field_names = {f.name for f in fields(TrainConfig)}
    for name in config_field_names:
        value = getattr(args, name, None)
        if value is not None:
            settings[name] = str(value) if isinstance(value, Path) else value
    train_manifest = args.train_manifest or settings.get("train_manifest")
    val_manifest = args.val_manifest or settings.get("val_manifest")
    if not train_manifest or not val_manifest:
        raise UsageError("--train-manifest and --val-manifest are required (flag or config)")
    for path in (train_manifest, val_manifest):
        if not Path(path).exists():
            raise RuntimeError(f"manifest not found: {path}")
    config = build_train_config(settings)
    checkpoint = train(config, train_manifest, val_manifest)
    print(checkpoint.path)
    return 0


def cmd_predict(args) -> int:
    if args.fusion and args.embeddings is None:
        raise UsageError(f"--fusion {args.fusion} requires --embeddings")
    model, train_config, _ = load_checkpoint(args.checkpoint)
    embeddings = load_embeddings(args.embeddings) if args.embeddings else None

    if args.fusion == "feature":
        if model.config.embedding_dim is None:
            raise RuntimeError(
                "checkpoint/config mismatch: feature fusion requested but the "
                "checkpoint was trained without fused distance features"
            )
    elif model.config.embedding_dim is not None:
        raise RuntimeError(
            "checkpoint/config mismatch: this checkpoint needs --fusion feature "
            "with --embeddings"
        )

    split = None if args.split == "all" else args.split
    dataset = PairDataset(
        args.manifest,
        split=split,
        embeddings=embeddings if args.fusion == "feature" else None,
    )
    groups = dataset.groups()

    rows = []
    for g in groups:
        score = model.score_pair(
            *(dataset.forward_args_for_paths(g.test_path, g.ref_path)),
        )
        value = scalar_score(score, aggregate=args.label_aggregate)
        if args.fusion == "score":
            e_t = _require_embedding(embeddings, g.test_path)
            e_r = _require_embedding(embeddings, g.ref_path)
            value = score_fusion(value, xvector_cosine_score(e_t, e_r), args.fusion_weight)
        rows.append({"pair_id": g.pair_id, "system_id": g.system_id, "score": value})
    write_predictions(rows, args.out)
    print(args.out)
    return 0


def _require_embedding(embeddings, path: str):
    key = Path(path).stem
    if embeddings is None or key not in embeddings:
        raise RuntimeError(f"no embedding for utterance {key!r}")
    return embeddings[key]


def cmd_evaluate(args) -> int:
    records = parse_manifest(args.manifest)
    if args.split != "all":
        chosen = [r for r in records if r.split == args.split]
        records = chosen if chosen else records
    groups = group_by_pair(records)
    if args.systems_filter:
        pattern = re.compile(args.systems_filter)
        groups = [g for g in groups if pattern.search(g.system_id)]
        if not groups:
            raise RuntimeError(f"no systems match {args.systems_filter!r}")
    preds = read_predictions(args.predictions)

    if args.level == "utterance":
        report = evaluate_utterance(preds, groups, mode=args.mode)
    else:
        report = evaluate_system(preds, groups)

    for line in report.format_lines():
        print(line)

    out_dir = args.out_dir or args.predictions.parent
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_json([report], out_dir / f"report_{args.level}.json")
    write_report_csv([report], out_dir / f"report_{args.level}.csv")
    if not args.no_figures:
        render_scatter(preds, groups, args.level, out_dir / f"scatter_{args.level}.png")
    return 0


class UsageError(ValueError):
    pass


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {
        "synth": cmd_synth,
        "train": cmd_train,
        "predict": cmd_predict,
        "evaluate": cmd_evaluate,
    }[args.command]
    try:
        return handler(args)
    except UsageError as exc:
        parser.error(str(exc))  # exits with status 2
    except (ConfigError, ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
