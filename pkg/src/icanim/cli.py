"""Command-line entry point: ``icanim <command> [options]``.

Commands: ``gen-data``, ``train {codec,pose,e2e}``, ``bootstrap``,
``animate`` and ``eval``. Every command takes ``--config`` (JSON or TOML)
and repeated ``--set section.key=value`` overrides on top of a preset.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

from .blobio import atomic_write_bytes
from .config import RunPreset, load_config
from .errors import IcanimError, UsageError

logger = logging.getLogger("icanim")


def _preset(args: argparse.Namespace) -> RunPreset:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"train.seed={args.seed}")
    if getattr(args, "steps", None) is not None:
        overrides.append(f"train.steps={args.steps}")
    return load_config(args.config, overrides, args.preset)


def _runnable(preset: RunPreset) -> None:
    if not preset.runnable:
        raise UsageError("preset 'paper' records published hyperparameters and is not runnable at desk scale")


# commands ------------------------------------------------------------------

def cmd_gen_data(args: argparse.Namespace) -> int:
    from .data import make_corpus, save_corpus
    from .skeleton import FAMILIES

    if args.family is not None and args.family not in FAMILIES:
        raise UsageError(f"unknown motion family {args.family!r}; choose from {FAMILIES}")
    if args.num < 1 or args.frames < 1:
        raise UsageError("--num and --frames must be positive")
    preset = _preset(args)
    c = preset.train
    clips = make_corpus(args.num, seed=c.seed, num_frames=args.frames, height=c.height, width=c.width,
                        fps=c.fps, family=args.family, subjects=args.subjects)
    index = save_corpus(clips, args.out)
    print(f"wrote {len(clips)} clips to {index}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    from .codec import VideoCodec
    from .data import load_corpus
    from .trainer import (
        TrainResult,
        prepare_base,
        train_codec_stage,
        train_e2e_stage,
        train_pose_stage,
        write_loss_csv,
    )

    preset = _preset(args)
    _runnable(preset)
    out = Path(args.out)
    if args.stage == "codec":
        if not args.data:
            raise UsageError("train codec needs --data (a corpus from gen-data)")
        codec, hist = train_codec_stage(load_corpus(args.data), preset, epochs=args.epochs)
        out.mkdir(parents=True, exist_ok=True)
        codec.save(out / "codec.bin")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        w.writerows([i, f"{v:.8g}"] for i, v in enumerate(hist))
        atomic_write_bytes(out / "codec_loss.csv", buf.getvalue().encode())
        print(f"codec written to {out / 'codec.bin'}")
        return 0
    if args.stage == "pose":
        if not args.codec or not Path(args.codec).is_file():
            raise UsageError("train pose needs a trained codec: run 'train codec' first and pass --codec")
        if not args.data:
            raise UsageError("train pose needs --data (a corpus from gen-data)")
        codec = VideoCodec.load(args.codec)
        clips = load_corpus(args.data)
        base = prepare_base(codec, preset, num_frames=max(len(x.video) for x in clips))
        res: TrainResult = train_pose_stage(clips, preset, codec, out_dir=out, base=base)
    else:
        from .bootstrap import load_triplets

        if not args.warmstart:
            raise UsageError("train e2e needs --warmstart (a pose-stage checkpoint)")
        if not args.triplets or not Path(args.triplets).is_file():
            raise UsageError("train e2e needs --triplets (a manifest from bootstrap)")
        res = train_e2e_stage(load_triplets(args.triplets), args.warmstart, preset, out_dir=out)
    write_loss_csv(res, out / "loss.csv")
    print(f"{args.stage} checkpoint written to {out}; final loss {res.losses[-1]:.4f}")
    return 0


def cmd_bootstrap(args: argparse.Namespace) -> int:
    from .backbone import load_checkpoint
    from .bootstrap import FilterPolicy, run_bootstrap
    from .data import load_corpus

    preset = _preset(args)
    bundle = load_checkpoint(args.checkpoint, expect_stage="pose")
    clips = load_corpus(args.data)
    if args.limit:
        clips = clips[: args.limit]
    policy = FilterPolicy(args.threshold, args.require_manual)
    summary = run_bootstrap(bundle, clips, args.out, policy, seed=preset.train.seed,
                            steps=args.sample_steps, flags_path=args.flags, workers=args.workers)
    print("\n".join(summary.report))
    return 0


def cmd_animate(args: argparse.Namespace) -> int:
    from .backbone import load_checkpoint
    from .skeleton import load_poses
    from .trainer import animate
    from .videoio import load_image, load_video, save_video

    preset = _preset(args)
    bundle = load_checkpoint(args.checkpoint)
    ref = load_image(args.ref)
    drv = Path(args.driving)
    driving = load_video(drv)[0] if drv.is_dir() else load_poses(drv)
    video = animate(bundle, ref, driving, steps=args.sample_steps, seed=preset.train.seed,
                    prompt=args.prompt)
    save_video(args.out, video, bundle.settings.get("fps", preset.train.fps))
    print(f"wrote {len(video)} frames to {args.out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    from .backbone import load_checkpoint
    from .evalbench import (
        GSBRecord,
        emit_report,
        gsb_aggregate,
        make_desk_benchmark,
        run_benchmark,
        score_benchmark,
    )

    preset = _preset(args)
    out = Path(args.out)
    manifest = args.manifest or make_desk_benchmark(out / "bench", seed=preset.train.seed)
    bundle = load_checkpoint(args.checkpoint)
    run = run_benchmark(bundle, manifest, out, seed=preset.train.seed, steps=args.sample_steps,
                        workers=args.workers)
    report = score_benchmark(run.index_path)
    for spec in args.gsb or []:
        name, _, counts = spec.partition(":")
        try:
            g, s, b = (int(x) for x in counts.split(","))
        except ValueError:
            raise UsageError(f"--gsb expects NAME:GOOD,SAME,BAD, got {spec!r}") from None
        report.gsb.append(GSBRecord(name, g, s, b))
        print(f"GSB vs {name}: {gsb_aggregate([report.gsb[-1]]):+.2f}%")
    files = emit_report(report, out / "report", run.index_path)
    print(f"generated {len(run.generated)}, failed {len(run.failures)}; report in {files[1]}")
    return run.exit_code


# parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or TOML config file")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--preset", default="desk", choices=["desk", "paper"])
    common.add_argument("--seed", type=int, help="overrides train.seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="icanim", description="In-context character animation at desk scale.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic stick-figure corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--num", type=int, default=50)
    g.add_argument("--frames", type=int, default=25)
    g.add_argument("--family", help="wave | walk | bounce (default: random per clip)")
    g.add_argument("--subjects", type=int, default=1)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train the codec, pose stage or end-to-end stage")
    t.add_argument("stage", choices=["codec", "pose", "e2e"])
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--data", help="corpus directory (codec, pose)")
    t.add_argument("--codec", help="codec.bin from 'train codec' (pose)")
    t.add_argument("--warmstart", help="pose-stage checkpoint directory (e2e)")
    t.add_argument("--triplets", help="triplet manifest from bootstrap (e2e)")
    t.add_argument("--steps", type=int, help="overrides train.steps")
    t.add_argument("--epochs", type=int, default=40, help="codec epochs")
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("bootstrap", parents=[common], help="synthesize, score and filter pseudo-pairs")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--threshold", type=float, default=4.5)
    b.add_argument("--require-manual", action="store_true")
    b.add_argument("--flags", help="manual verification flag file")
    b.add_argument("--limit", type=int)
    b.add_argument("--sample-steps", type=int, default=20)
    b.add_argument("--workers", type=int, default=1)
    b.set_defaults(func=cmd_bootstrap)

    a = sub.add_parser("animate", parents=[common], help="animate a reference image")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--ref", required=True, help="reference PNG")
    a.add_argument("--driving", required=True, help="pose file (pose stage) or frame directory (e2e)")
    a.add_argument("--out", required=True)
    a.add_argument("--prompt")
    a.add_argument("--sample-steps", type=int, default=20)
    a.set_defaults(func=cmd_animate)

    e = sub.add_parser("eval", parents=[common], help="run and score a benchmark manifest")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", help="benchmark manifest (default: generate the desk manifest)")
    e.add_argument("--out", required=True)
    e.add_argument("--gsb", action="append", metavar="NAME:G,S,B", help="GSB counts vs a baseline")
    e.add_argument("--sample-steps", type=int, default=20)
    e.add_argument("--workers", type=int, default=1)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except IcanimError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
