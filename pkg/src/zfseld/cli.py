"""Command-line interface.

Verbs: ``simulate`` | ``train`` | ``support`` | ``infer`` | ``evaluate``.
Exit codes: 0 on success, 2 for validation/config problems, 3 for
runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dataio, pipeline
from .config import RunConfig, load_config, save_config
from .errors import ValidationError, ZfseldError
from .network import load_checkpoint

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, help="run configuration JSON")
    sub.add_argument("--seed", type=int, help="override the configured root seed")
    sub.add_argument("--out", type=Path, help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zfseld",
        description="Zero- and few-shot sound event localization and detection toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic spatial scene corpus")
    _common_flags(p)
    p.add_argument("--n-scenes", type=int, default=8)

    p = sub.add_parser("train", help="train the track-wise model on a corpus")
    _common_flags(p)
    p.add_argument("--data", type=Path, required=True, help="corpus directory (with manifest.json)")
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")

    p = sub.add_parser("support", help="build and serialize a support set")
    _common_flags(p)
    p.add_argument("mode", choices=["zero", "few"])
    p.add_argument("--classes", help="comma-separated class names (default: config scene classes)")
    p.add_argument(
        "--shots",
        type=Path,
        help='few mode: JSON {"classes": {"name": ["clip.wav", ...]}, "noise": ["clip.wav", ...]}',
    )

    p = sub.add_parser("infer", help="run inference on a recording")
    _common_flags(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--support", type=Path, required=True)
    p.add_argument("--audio", type=Path, required=True)
    p.add_argument(
        "--clap-override",
        action="store_true",
        help="re-label single-source frames with the whole-segment embedding's class",
    )

    p = sub.add_parser("evaluate", help="score predictions against references")
    _common_flags(p)
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--ref", type=Path, required=True)
    return parser


def _load_run_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config.seed = args.seed
    config.validate()
    return config


def _require_out(args, what: str) -> Path:
    if args.out is None:
        raise ValidationError(f"--out is required for {what}")
    return args.out


def cmd_simulate(args) -> int:
    config = _load_run_config(args)
    out_dir = _require_out(args, "simulate")
    manifest = pipeline.simulate_corpus(config, out_dir, args.n_scenes)
    save_config(config, Path(out_dir) / "config.json")
    print(f"wrote {len(manifest['scenes'])} scenes to {out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_run_config(args)
    out_ckpt = _require_out(args, "train")
    log_path = Path(str(out_ckpt) + ".losses.csv")

    def progress(it, train_loss, val_loss, lr):
        print(f"iter {it:6d}  train {train_loss:.4f}  val {val_loss:.4f}  lr {lr:.2e}")

    summary = pipeline.train_model(
        config, args.data, out_ckpt, resume=args.resume, log_path=log_path, progress=progress
    )
    print(f"checkpoint: {summary['checkpoint']}  loss log: {log_path}")
    return EXIT_OK


def cmd_support(args) -> int:
    config = _load_run_config(args)
    out_path = _require_out(args, "support")
    class_names = (
        [c for c in args.classes.split(",") if c]
        if args.classes
        else list(config.scene.class_names)
    )
    if args.mode == "zero":
        support = pipeline.support_zero_from_config(config, class_names)
    else:
        if args.shots is None:
            raise ValidationError("few mode requires --shots")
        with open(args.shots, "r", encoding="utf-8") as fh:
            spec = json.load(fh)
        if "classes" not in spec or "noise" not in spec:
            raise ValidationError('--shots JSON needs "classes" and "noise" entries')
        support = pipeline.support_from_clips(
            config, class_names, spec["classes"], spec["noise"]
        )
    dataio.save_support(out_path, support)
    print(f"wrote {support.n_classes} class supports (+noise) to {out_path}")
    return EXIT_OK


def cmd_infer(args) -> int:
    config = _load_run_config(args)
    out_csv = _require_out(args, "infer")
    if args.clap_override:
        config.decoder.use_clap_combination = True
    net, _opt, _it = load_checkpoint(args.checkpoint)
    support = dataio.load_support(args.support)
    wave, rate = dataio.read_wav(args.audio)
    provider = (
        pipeline.provider_from_config(config) if config.decoder.use_clap_combination else None
    )
    records = pipeline.infer_scene(config, net, support, wave, rate, provider=provider)
    dataio.write_annotation_csv(out_csv, records)
    print(f"wrote {len(records)} detections to {out_csv}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    refs = dataio.read_annotation_csv(args.ref)
    preds = dataio.read_annotation_csv(args.pred)
    report = pipeline.evaluate_records(refs, preds)
    print(report.format_text())
    if args.out is not None:
        lines = [f"{k}={v}" for k, v in report.to_dict().items()]
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "support": cmd_support,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ZfseldError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
