"""``pianoskill`` command-line tool.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 runtime error.
Errors are reported as one line on stderr: ``error: <kind>: <message>``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .datamodel import HandBBox, ManifestParseError, PerformanceRecord, Split, dataset_summary, load_manifest
from .dataset import ClipLoader, SampleRef
from .evalharness import evaluate, predict_refs, modality_scheme_grid
from .model import Modality, describe_state_dict
from .sampling import SamplingScheme, enumerate_samples
from .synthetic import MANIFEST_NAME, SyntheticSpec, generate_synthetic
from .trainer import PRESETS, TrainConfig, TrainingError, load_checkpoint, read_checkpoint, train
from .validation import ValidationError, check_bbox_in_frame

DATA_ROOT_ENV = "PIANOSKILL_DATA_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3

_DEFAULTS = TrainConfig()
_WEIGHT_FLAGS = ("alpha1", "alpha2", "beta1", "beta2", "gamma1", "gamma2")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _data_path(value: str) -> Path:
    path = Path(value).expanduser()
    root = os.environ.get(DATA_ROOT_ENV)
    if not path.is_absolute() and not path.exists() and root:
        return Path(root) / path
    return path


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--config", type=Path, help="YAML file with TrainConfig fields (flags override it)")
    g.add_argument("--preset", choices=sorted(PRESETS), help="'desk' sets width_factor=0.25, epochs=20 (default: full)")
    g.add_argument("--learning-rate", type=float, help=f"Adam learning rate (default: {_DEFAULTS.learning_rate})")
    g.add_argument("--epochs", type=int, help=f"training epochs (default: {_DEFAULTS.epochs})")
    g.add_argument("--batch-size", type=int, help=f"samples per step (default: {_DEFAULTS.batch_size})")
    g.add_argument("--modality", choices=[m.value for m in Modality], help=f"branches to train (default: {_DEFAULTS.modality.value})")
    g.add_argument("--scheme", choices=[s.value for s in SamplingScheme], help=f"sampling scheme (default: {_DEFAULTS.scheme.value})")
    g.add_argument("--seed", type=int, help=f"master seed (default: {_DEFAULTS.seed})")
    g.add_argument("--width-factor", type=float, help=f"channel width multiplier in (0, 1] (default: {_DEFAULTS.width_factor})")
    g.add_argument("--flip-prob", type=float, help=f"horizontal flip probability per clip (default: {_DEFAULTS.flip_prob})")
    g.add_argument("--level-head", choices=["expectation", "scalar"], help=f"predicted-level head (default: {_DEFAULTS.level_head})")
    g.add_argument("--holdout-fraction", type=float, help=f"train performances held out for validation (default: {_DEFAULTS.holdout_fraction})")
    g.add_argument("--workers", type=int, help=f"preprocessing threads (default: {_DEFAULTS.workers})")
    g.add_argument("--visual-pretrained", help="action-recognition checkpoint for the video backbone (default: none)")
    g.add_argument("--aural-pretrained", help="ResNet-18 image checkpoint for the audio backbone (default: none)")
    for name in _WEIGHT_FLAGS:
        g.add_argument(f"--{name}", type=float, help=f"loss weight (default: {getattr(_DEFAULTS.weights, name)})")


def _train_config(args) -> TrainConfig:
    base = dict(PRESETS[args.preset]) if args.preset else {}
    if args.config:
        cfg = TrainConfig.from_file(args.config).to_dict()
        base.update(cfg)
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    weights = dict(base.pop("weights", None) or {})
    for name in fields - {"weights", "adam_betas", "adam_eps"}:
        value = getattr(args, name, None)
        if value is not None:
            base[name] = value
    for name in _WEIGHT_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            weights[name] = value
    if weights:
        base["weights"] = weights
    return TrainConfig.from_dict(base)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pianoskill", description="Piano skill assessment from video and audio.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="check a manifest file")
    p.add_argument("manifest")
    p.add_argument("--check-media", action="store_true", help="also open every media file")

    p = sub.add_parser("summary", help="frame-length, split and level statistics of a manifest")
    p.add_argument("manifest")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("dump-samples", help="list clip start frames, one CSV line per clip")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--frames", type=int, help="frame count of a single performance")
    src.add_argument("--manifest", help="enumerate every record of a manifest")
    p.add_argument("--id", default="performance", help="performance id used with --frames (default: performance)")
    p.add_argument("--scheme", choices=[s.value for s in SamplingScheme], default="uniform", help="(default: uniform)")
    p.add_argument("--header", action="store_true", help="print a header line")

    p = sub.add_parser("make-synth", help="render a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--cue", choices=["global", "localized"], default="global", help="(default: global)")
    p.add_argument("--train-per-level", type=int, default=2, help="(default: 2)")
    p.add_argument("--test-per-level", type=int, default=1, help="(default: 1)")
    p.add_argument("--frames", type=int, default=640, help="frames per performance (default: 640)")
    p.add_argument("--localized-fraction", type=float, default=0.2, help="(default: 0.2)")
    p.add_argument("--seed", type=int, default=0, help="(default: 0)")
    p.add_argument("--workers", type=int, default=0, help="(default: 0)")

    p = sub.add_parser("train", help="train a model on a manifest's train split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory for checkpoints and the training log")
    _add_train_flags(p)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--scheme", choices=[s.value for s in SamplingScheme], help="(default: the manifest's scheme)")
    p.add_argument("--split", choices=[s.value for s in Split], default="test", help="(default: test)")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("grid", help="train/evaluate all modality x scheme cells")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="directory for per-cell checkpoints and grid.csv")
    _add_train_flags(p)

    p = sub.add_parser("infer", help="predict the player level of one performance")
    p.add_argument("checkpoint")
    p.add_argument("video", help="frame directory or video file")
    p.add_argument("audio", help="PCM wave file")
    p.add_argument("--bbox", required=True, help="hand box x,y,w,h in pixels")
    p.add_argument("--fps", type=float, default=30.0, help="(default: 30)")
    p.add_argument("--frames", type=int, help="frame count (default: all frames of the source)")
    p.add_argument("--scheme", choices=[s.value for s in SamplingScheme], default="uniform", help="(default: uniform)")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("describe-checkpoint", help="list parameter names and shapes")
    p.add_argument("checkpoint")
    return parser


def _cmd_validate(args) -> int:
    manifest = load_manifest(_data_path(args.manifest))
    if args.check_media:
        from .audio import load_wav
        from .vision import open_frame_source

        for rec in manifest.records:
            src = open_frame_source(manifest.resolve(rec.video_uri))
            if len(src) < rec.frame_count:
                raise ValidationError(f"source has {len(src)} frames, manifest says {rec.frame_count}", rec.id, "frame_count")
            wave, rate = load_wav(manifest.resolve(rec.audio_uri), None)
            if len(wave) / rate + 1e-6 < rec.frame_count / rec.fps:
                raise ValidationError("audio is shorter than the video", rec.id, "audio")
    print(f"OK: {len(manifest)} records")
    return EXIT_OK


def _cmd_summary(args) -> int:
    report = dataset_summary(load_manifest(_data_path(args.manifest)))
    print(json.dumps(report.to_dict(), indent=2) if args.json else report.format())
    return EXIT_OK


def _cmd_dump_samples(args) -> int:
    scheme = SamplingScheme.parse(args.scheme)
    if args.manifest:
        records = load_manifest(_data_path(args.manifest)).records
    else:
        if args.frames < 0:
            raise ValidationError("must be >= 0", "--frames")
        records = [_Stub(args.id, args.frames)]
    w = csv.writer(sys.stdout, lineterminator="\n")
    if args.header:
        w.writerow(["performance_id", "scheme", "sample_index", "clip_index", "start_frame"])
    for rec in records:
        for sample in enumerate_samples(rec, scheme):
            for j, clip in enumerate(sample.clips):
                w.writerow([rec.id, scheme.value, sample.sample_index, j, clip.start_frame])
    return EXIT_OK


@dataclasses.dataclass(frozen=True)
class _Stub:
    id: str
    frame_count: int


def _cmd_make_synth(args) -> int:
    spec = SyntheticSpec(
        train_per_level=args.train_per_level,
        test_per_level=args.test_per_level,
        frame_count=args.frames,
        cue=args.cue,
        localized_fraction=args.localized_fraction,
        seed=args.seed,
    )
    out = _data_path(args.out)
    manifest = generate_synthetic(spec, out, workers=args.workers)
    print(f"wrote {len(manifest)} performances; manifest: {out / MANIFEST_NAME}")
    return EXIT_OK


def _cmd_train(args) -> int:
    config = _train_config(args)
    manifest = load_manifest(_data_path(args.manifest))
    result = train(manifest, config, out_dir=_data_path(args.out))
    print(json.dumps({
        "final_loss": round(result.final_loss, 6),
        "final_checkpoint": str(result.final_checkpoint),
        "best_checkpoint": str(result.best_checkpoint),
    }))
    return EXIT_OK


def _cmd_eval(args) -> int:
    manifest = load_manifest(_data_path(args.manifest))
    report = evaluate(_data_path(args.checkpoint), manifest, args.scheme, args.split)
    print(report.to_json() if args.json else report.format())
    return EXIT_OK


def _cmd_grid(args) -> int:
    config = _train_config(args)
    manifest = load_manifest(_data_path(args.manifest))
    grid = modality_scheme_grid(manifest, config, out_dir=_data_path(args.out) if args.out else None)
    print(grid.format())
    return EXIT_OK


def _cmd_infer(args) -> int:
    from .vision import open_frame_source

    try:
        bbox = HandBBox.parse(args.bbox)
    except ValidationError as exc:
        raise ValidationError(str(exc), "--bbox") from None
    model, _ = load_checkpoint(_data_path(args.checkpoint))
    video, audio = _data_path(args.video), _data_path(args.audio)
    source = open_frame_source(video)
    check_bbox_in_frame(bbox, *source.frame_size, subject="input")
    n_frames = args.frames if args.frames is not None else len(source)
    rec = PerformanceRecord(
        id="input", video_uri=str(video), frame_count=n_frames, audio_uri=str(audio), audio_sample_rate=22050,
        player_level=1, song_level=1, song_name="", hand_bbox=bbox, split=Split.TEST, fps=args.fps,
    )
    refs = [SampleRef(rec, s, video, audio) for s in enumerate_samples(rec, args.scheme)]
    if not refs:
        raise ValidationError(f"need at least 160 frames, got {n_frames}", "video")
    logits = predict_refs(model, refs, ClipLoader(), batch_size=4)
    result = {}
    for branch, lg in sorted(logits.items(), key=lambda kv: kv[0].value):
        z = np.exp(lg - lg.max(axis=1, keepdims=True))
        probs = (z / z.sum(axis=1, keepdims=True)).mean(axis=0)
        result[branch.value] = {
            "level": int(np.argmax(probs) + 1),
            "expected_level": round(float(probs @ np.arange(1, 11)), 4),
            "probabilities": [round(float(p), 6) for p in probs],
        }
    if args.json:
        print(json.dumps({"samples": len(refs), "branches": result}))
    else:
        print(f"samples: {len(refs)}")
        for name, r in result.items():
            probs = " ".join(f"{p:.3f}" for p in r["probabilities"])
            print(f"{name}: level {r['level']} (expected {r['expected_level']:.2f}) probs [{probs}]")
    return EXIT_OK


def _cmd_describe(args) -> int:
    payload = read_checkpoint(_data_path(args.checkpoint))
    print(f"model_config: {json.dumps(payload['model_config'])}")
    for name, shape, dtype in describe_state_dict(payload["state_dict"]):
        print(f"{name}\t{'x'.join(map(str, shape)) or 'scalar'}\t{dtype}")
    return EXIT_OK


COMMANDS = {
    "validate": _cmd_validate,
    "summary": _cmd_summary,
    "dump-samples": _cmd_dump_samples,
    "make-synth": _cmd_make_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "grid": _cmd_grid,
    "infer": _cmd_infer,
    "describe-checkpoint": _cmd_describe,
}


def _fail(kind: str, exc: BaseException | str, code: int) -> int:
    msg = " ".join(str(exc).split())
    print(f"error: {kind}: {msg}", file=sys.stderr)
    return code


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, ManifestParseError) as exc:
        return _fail("validation", exc, EXIT_VALIDATION)
    except (TrainingError, OSError, RuntimeError, ValueError) as exc:
        return _fail("runtime", exc, EXIT_RUNTIME)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
