"""Command-line entry point.

Subcommands: preprocess, gms (alias gms-dump), features, train, predict,
eval, ensemble, synth. Every command accepts --config FILE and repeated
--set key=value overrides. Failures exit nonzero with a single
machine-parsable line on stderr: `error: <kind>: <message>`.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import gms as gms_mod
from .config import RunConfig, load_config
from .errors import ManifestError, RqvqaError
from .features import assemble_bundle, save_sidecar
from .fusion import load_checkpoint, save_checkpoint, train
from .harness import (
    ensemble_predict,
    load_bundles,
    load_manifest,
    predict_scores,
    write_predictions,
)
from .metrics import evaluate
from .preproc import (
    VideoFrames,
    crop,
    extract_chunks,
    extract_key_frames,
    load_raw_video,
    resize_exact,
    resize_min_side,
    save_raw_video,
)
from .synthetic import make_synthetic_corpus


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--set", action="append", default=[], metavar="K=V",
                        dest="overrides", help="override one config key")


def _config(args) -> RunConfig:
    return load_config(args.config, args.overrides)


def cmd_synth(args) -> int:
    manifest = make_synthetic_corpus(args.out, args.n, args.seed,
                                     width=args.width, height=args.height,
                                     fps=args.fps, seconds=args.seconds,
                                     videos_per_scene=args.videos_per_scene)
    print(f"wrote {len(manifest)} videos under {args.out}")
    return 0


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    pp = cfg.preproc
    video = load_raw_video(args.video)
    keys = extract_key_frames(video)
    chunks = extract_chunks(video)

    out = Path(args.out)
    cropped = []
    for i, frame in enumerate(keys.frames):
        resized = resize_min_side(frame, pp.keyframe_min_side)
        seed = pp.crop_seed + i if pp.crop_mode == "random" else None
        cropped.append(crop(resized, pp.keyframe_crop, mode=pp.crop_mode,
                            seed=seed))
    save_raw_video(VideoFrames.from_array(np.stack(cropped), frame_rate=1),
                   out / "keyframes")

    resized_chunks = np.stack([
        np.stack([resize_exact(f, pp.chunk_size, pp.chunk_size)
                  for f in chunk])
        for chunk in chunks.chunks])
    flat = resized_chunks.reshape(-1, pp.chunk_size, pp.chunk_size, 3)
    save_raw_video(VideoFrames.from_array(flat, frame_rate=video.frame_rate),
                   out / "chunks")
    print(f"wrote {keys.count} key frames and {chunks.count} chunks under {out}")
    return 0


def cmd_gms(args) -> int:
    cfg = _config(args)
    ex = cfg.extraction
    video = load_raw_video(args.video)
    frames = video if ex.gms_all_frames else extract_key_frames(video)
    plan = gms_mod.make_plan(video.width, video.height, ex.gms_grid_count,
                             ex.gms_patch_size, ex.gms_seed)
    volume = gms_mod.sample_fragments(frames, plan)
    fps = video.frame_rate if ex.gms_all_frames else 1
    save_raw_video(VideoFrames.from_array(volume.frames, frame_rate=fps),
                   args.out)
    side = plan.grid_count * plan.patch_size
    print(f"wrote {volume.frames.shape[0]} fragment frames "
          f"({side}x{side}) under {args.out}")
    return 0


def cmd_features(args) -> int:
    cfg = _config(args)
    registry = cfg.build_registry()
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    for rec in manifest.records:
        path = Path(rec.path)
        video = load_raw_video(path) if (path / "meta.txt").is_file() else None
        bundle = assemble_bundle(video, registry, sidecar_dir=path,
                                 video_id=rec.video_id,
                                 extraction=cfg.extraction)
        for source in registry:
            save_sidecar(source, bundle.matrices[source.name],
                         out / rec.video_id / f"{source.name}.rqvf")
    print(f"wrote sidecars for {len(manifest)} videos under {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    registry = cfg.build_registry()
    manifest = load_manifest(args.manifest)
    dataset = load_bundles(manifest, registry, cfg.extraction)
    result = train(dataset, registry, cfg.train)
    save_checkpoint(args.out, result.head, cfg.train, master_seed=cfg.seed)
    losses = result.trace.epoch_losses
    print(f"trained {result.trace.steps} steps "
          f"(skipped {result.trace.skipped_batches} constant-label batches); "
          f"final epoch loss {losses[-1]:.6f}; checkpoint {args.out}")
    return 0


def cmd_predict(args) -> int:
    cfg = _config(args)
    registry = cfg.build_registry()
    head, _, _ = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    rows = predict_scores(head, manifest, registry, cfg.extraction)
    write_predictions(rows, args.out)
    print(f"wrote {len(rows)} predictions to {args.out}")
    return 0


def cmd_eval(args) -> int:
    pred, mos = [], []
    with open(args.pred, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            if len(row) < 2:
                raise ManifestError(f"{args.pred}: expected 2 columns")
            try:
                pred.append(float(row[0]))
                mos.append(float(row[1]))
            except ValueError:
                continue  # header row
    report = evaluate(pred, mos)
    lines = [f"srcc={report.srcc:.6f}",
             f"plcc_raw={report.plcc_raw:.6f}",
             f"plcc_4pl={report.plcc_4pl:.6f}"]
    if report.fit is not None:
        lines += [f"beta1={report.fit.beta1:.6f}",
                  f"beta2={report.fit.beta2:.6f}",
                  f"beta3={report.fit.beta3:.6f}",
                  f"beta4={report.fit.beta4:.6f}"]
    else:
        lines += [f"beta{i}=nan" for i in (1, 2, 3, 4)]
    lines.append(f"n={report.n}")
    if report.fit_failed:
        lines.append("fit_failed=1")
    text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_ensemble(args) -> int:
    cfg = _config(args)
    registry = cfg.build_registry()
    train_manifest = load_manifest(args.train_manifest)
    target = load_manifest(args.target_manifest) if args.target_manifest \
        else None
    rows = ensemble_predict(train_manifest, registry, cfg.train,
                            k_splits=args.k, target_manifest=target,
                            master_seed=cfg.seed, ratio=cfg.split.ratio,
                            grouping=cfg.split.grouping,
                            combiner=cfg.ensemble_combiner,
                            extraction=cfg.extraction)
    write_predictions(rows, args.out)
    print(f"wrote {len(rows)} ensembled predictions to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rqvqa",
        description="Blind video quality assessment from fused features")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=320)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--fps", type=int, default=4)
    p.add_argument("--seconds", type=int, default=2)
    p.add_argument("--videos-per-scene", type=int, default=4)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess",
                       help="write key-frame and chunk branches of one video")
    p.add_argument("--video", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_preprocess)

    for name in ("gms", "gms-dump"):
        p = sub.add_parser(name, help="dump the fragment volume of one video")
        p.add_argument("--video", required=True)
        p.add_argument("--out", required=True)
        _add_common(p)
        p.set_defaults(func=cmd_gms)

    p = sub.add_parser("features", help="materialize sidecars for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train the fusion head on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score a manifest with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="prediction CSV path")
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval",
                       help="evaluate a 2-column (prediction, MOS) CSV")
    p.add_argument("--pred", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ensemble",
                       help="train k split models and combine predictions")
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--target-manifest", default=None)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_ensemble)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RqvqaError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
