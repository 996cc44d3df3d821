"""Command line entry point: ``cma-grounding <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig, apply_overrides, load_config
from .data import (SyntheticConfig, Vocabulary, dataset_stats, generate_synthetic, load_dataset,
                   parse_annotations, read_features, save_dataset, uniform_sample_indices)
from .errors import ConfigError, DataError, GroundingError
from .model import clamp_interval, predict
from .report import report
from .training import (Checkpoint, ablate, evaluate_model, format_ablation, train,
                       vocab_from_checkpoint, write_predictions)

log = logging.getLogger("cma_grounding")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key] = _parse_value(value)
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    return out


def _config(args) -> ModelConfig:
    if args.config:
        return load_config(args.config, _overrides(args))
    data = apply_overrides({}, _overrides(args))
    return ModelConfig.from_dict(data).validate()


def _durations(path: str | None) -> dict[str, float] | None:
    if not path:
        return None
    try:
        return {str(k): float(v) for k, v in json.loads(Path(path).read_text()).items()}
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read durations {path}: {exc}") from exc


def _check_device(args) -> None:
    if args.device != "cpu":
        raise ConfigError(f"device {args.device!r} unavailable; this build runs on cpu only")


def cmd_generate_data(args) -> int:
    cfg = SyntheticConfig(count=args.count + args.test_count, N=args.N, d_v=args.d_v,
                          vocab=args.vocab, seed=args.seed or 0, bias_sigma=args.bias_sigma,
                          mean_ratio=args.mean_ratio)
    ds = generate_synthetic(cfg)
    out = Path(args.out)
    save_dataset(ds.subset(range(args.count)), out, "train.jsonl")
    if args.test_count:
        save_dataset(ds.subset(range(args.count, len(ds))), out, "test.jsonl")
    print(f"wrote {args.count} train / {args.test_count} test samples to {out}")
    return 0


def cmd_stats(args) -> int:
    samples = parse_annotations(args.annotations, args.format, _durations(args.durations))
    st = dataset_stats(samples, args.buckets)
    print(f"count: {st.count}")
    print(f"mean_ratio: {st.mean_ratio:.4f}")
    edges = st.bucket_edges
    for i, c in enumerate(st.ratio_histogram):
        print(f"[{edges[i]:.2f}, {edges[i + 1]:.2f}): {c}")
    return 0


def cmd_train(args) -> int:
    _check_device(args)
    cfg = _config(args)
    train_set = load_dataset(args.train, args.features, args.format, durations=_durations(args.durations))
    val_set = None
    if args.val:
        val_set = load_dataset(args.val, args.features, args.format, vocab=train_set.vocab,
                               durations=_durations(args.durations))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(cfg, train_set, val_set, log_path=out / "metrics.jsonl",
                   checkpoint_path=out / "checkpoint.pt")
    print(f"checkpoint: {out / 'checkpoint.pt'} (epoch {result.checkpoint.epoch})")
    return 0


def cmd_eval(args) -> int:
    _check_device(args)
    ckpt = Checkpoint.load(args.checkpoint)
    ds = load_dataset(args.annotations, args.features, args.format, vocab=vocab_from_checkpoint(ckpt),
                      durations=_durations(args.durations))
    rep, records = evaluate_model(ckpt.model(), ds, against=args.against)
    print(rep.to_text())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_predictions(records, out / "predictions.jsonl")
        (out / "report.json").write_text(json.dumps(rep.as_dict(), indent=2))
    return 0


def cmd_predict(args) -> int:
    _check_device(args)
    ckpt = Checkpoint.load(args.checkpoint)
    model = ckpt.model()
    feats = read_features(args.features_file)
    if feats.shape[1] != ckpt.config.d_v:
        raise ConfigError(f"features have d_v={feats.shape[1]}, checkpoint expects {ckpt.config.d_v}")
    feats = feats[uniform_sample_indices(feats.shape[0], ckpt.config.N)]
    vocab: Vocabulary = vocab_from_checkpoint(ckpt)
    tokens = (vocab.encode(args.query) or [1])[:ckpt.config.L_max]
    raw = predict(model, feats, tokens)
    c = clamp_interval(raw)
    rec = {"query": args.query, "pred_start_norm": c.start, "pred_end_norm": c.end}
    if args.duration:
        rec["pred_start"], rec["pred_end"] = c.start * args.duration, c.end * args.duration
    print(json.dumps(rec))
    return 0


def cmd_ablate(args) -> int:
    _check_device(args)
    cfg = _config(args)
    train_set = load_dataset(args.train, args.features, args.format, durations=_durations(args.durations))
    test_set = load_dataset(args.test, args.features, args.format, vocab=train_set.vocab,
                            durations=_durations(args.durations))
    rows = ablate(cfg, args.axis, train_set, test_set, seeds=args.seeds, against=args.against)
    table = format_ablation(args.axis, rows)
    print(table)
    if args.out:
        Path(args.out).write_text(table + "\n")
    return 0


def cmd_report(args) -> int:
    summary = report(args.log, args.predictions, args.out)
    print(summary.text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cma-grounding", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=False, data=False):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--device", default="cpu")
        if config:
            sp.add_argument("--config", help="YAML or JSON file with ModelConfig fields")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                            help="override a config field, e.g. loss.alpha=2")
        if data:
            sp.add_argument("--features", required=True, help="directory of <id>.cmaf files")
            sp.add_argument("--format", default="jsonl", choices=("jsonl", "charades_txt"))
            sp.add_argument("--durations", help="JSON map of video id to seconds (charades_txt)")

    sp = sub.add_parser("generate-data", help="write a synthetic dataset")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int, default=2000)
    sp.add_argument("--test-count", type=int, default=500)
    sp.add_argument("--N", type=int, default=16)
    sp.add_argument("--d-v", type=int, default=32)
    sp.add_argument("--vocab", type=int, default=64)
    sp.add_argument("--bias-sigma", type=float, default=0.0)
    sp.add_argument("--mean-ratio", type=float, default=0.27)
    sp.set_defaults(func=cmd_generate_data)

    sp = sub.add_parser("stats", help="interval-ratio statistics of an annotation file")
    common(sp)
    sp.add_argument("annotations")
    sp.add_argument("--format", default="jsonl", choices=("jsonl", "charades_txt"))
    sp.add_argument("--durations")
    sp.add_argument("--buckets", type=int, default=20)
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("train", help="train a model")
    common(sp, config=True, data=True)
    sp.add_argument("--train", required=True)
    sp.add_argument("--val")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp, data=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--annotations", required=True)
    sp.add_argument("--against", default="annotated", choices=("annotated", "true"))
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="ground one query in one video")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--features-file", required=True)
    sp.add_argument("--query", required=True)
    sp.add_argument("--duration", type=float)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("ablate", help="train and compare variants along one axis")
    common(sp, config=True, data=True)
    sp.add_argument("--axis", required=True, choices=("structure", "pe", "fusion", "loss"))
    sp.add_argument("--train", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--seeds", type=int, nargs="+", default=[0])
    sp.add_argument("--against", default="annotated", choices=("annotated", "true"))
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("report", help="plots and summary from a metrics log")
    common(sp)
    sp.add_argument("--log", required=True)
    sp.add_argument("--predictions")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None:
        torch.manual_seed(args.seed)
        np.random.seed(args.seed)
    try:
        return args.func(args)
    except GroundingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
