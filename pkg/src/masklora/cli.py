"""``masklora`` command line: synth, make-mask, train, propagate, evaluate.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import evaluation
from .conditioning import MaskKind, make_mask
from .config import ConfigError, ExperimentConfig, load_config
from .errors import MaskLoraError, MediaError
from .media import PixelMask, load_mask_sequence, load_video, save_mask_sequence, save_video

log = logging.getLogger("masklora")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _size(text: str) -> tuple[int, int]:
    """``WIDTHxHEIGHT`` -> ``(height, width)``."""
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 64x64, got {text!r}") from None
    return h, w


def _rect(text: str) -> tuple[int, int, int, int]:
    try:
        x0, y0, x1, y1 = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"rect must be x0,y0,x1,y1, got {text!r}") from None
    return x0, y0, x1, y1


def _config(args) -> ExperimentConfig:
    return load_config(args.config, args.set)


def _keep_config(cfg: ExperimentConfig, dest_dir: Path) -> None:
    if cfg.source is None:
        return
    dest_dir.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(cfg.source, dest_dir / "experiment.toml")
    if cfg.overrides:
        (dest_dir / "overrides.txt").write_text("\n".join(cfg.overrides) + "\n")


def _backbone(cfg: ExperimentConfig):
    from .backbone import load_toy_backbone

    name = cfg.raw["backbone"]["name"]
    if name != "toy":
        raise ConfigError(f"unknown backbone {name!r}; only 'toy' ships with this package")
    return load_toy_backbone(cfg.backbone_weights, schedule_mode=cfg.schedule_mode())


def _provider(cfg: ExperimentConfig):
    d = cfg.raw["eval"]
    if d["provider"] != "toy":
        raise ConfigError(f"unknown embedding provider {d['provider']!r}")
    return evaluation.ToyEmbedding(int(d["pool"]))


# -- commands -----------------------------------------------------------------


def cmd_synth(args) -> int:
    from .synth import SquareScene, generate, write_synth

    if args.config:
        cfg = _config(args)
        scene, seed = cfg.scene(), cfg.seed
        out = Path(args.out) if args.out else cfg.path("data")
    else:
        if not args.out:
            raise UsageError("synth needs --out or --config")
        h, w = args.size
        scene = SquareScene(
            frames=args.frames, height=h, width=w, size=args.square,
            velocity=tuple(args.velocity), start=tuple(args.start),
            appearance_frames=tuple(args.appearance_frame),
        )
        seed, out = args.seed, Path(args.out)
    scene.validate()
    data = generate(scene, seed)
    write_synth(data, out)
    print(f"wrote synthetic dataset ({scene.frames} frames, {scene.height}x{scene.width}) to {out}")
    return EXIT_OK


def cmd_make_mask(args) -> int:
    if args.config:
        cfg = _config(args)
        kind = MaskKind(args.kind) if args.kind else cfg.mask_kind
        region_dir = args.region or (cfg.path("region") if kind in _REGION_KINDS else None)
        out = Path(args.out) if args.out else cfg.path("preserve_mask")
        if region_dir is None:
            video = load_video(cfg.path("video"))
            frames, (h, w) = video.num_frames, video.frame_size
        else:
            frames, h, w = None, None, None
    else:
        if not args.kind or not args.out:
            raise UsageError("make-mask needs --kind and --out (or --config)")
        kind, region_dir, out = MaskKind(args.kind), args.region, Path(args.out)
        frames = args.frames
        h, w = args.size if args.size else (None, None)

    region = None
    if region_dir is not None:
        region = load_mask_sequence(region_dir)
        if frames is not None and region.num_frames == 1 and frames > 1:
            region = PixelMask(np.repeat(region.data, frames, axis=1))
        frames = region.num_frames if frames is None else frames
        h, w = region.shape[2:]
    elif args.rect:
        if frames is None or h is None:
            raise UsageError("--rect needs --frames and --size")
        x0, y0, x1, y1 = args.rect
        if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
            raise UsageError(f"rectangle {args.rect} does not fit a {w}x{h} frame")
        data = np.zeros((1, frames, h, w), np.float32)
        data[:, :, y0:y1, x0:x1] = 1.0
        region = PixelMask(data)
    if frames is None or h is None:
        raise UsageError("mask geometry needs --frames and --size, or --region")
    if kind is MaskKind.APPEARANCE and frames != 1:
        raise UsageError("appearance masks are single-frame; use --frames 1")
    if kind in _REGION_KINDS and region is None:
        raise UsageError(f"--kind {kind.value} needs --region or --rect")
    mask = make_mask(kind, frames, h, w, region=region)
    save_mask_sequence(mask, out)
    print(f"wrote {kind.value} mask ({frames} frames, {w}x{h}) to {out}")
    return EXIT_OK


_REGION_KINDS = {MaskKind.SELECTIVE, MaskKind.DISENTANGLE, MaskKind.APPEARANCE}


def cmd_train(args) -> int:
    from .backbone.text import StubCaptioner, caption
    from .lora import save_adapter
    from .training import run_two_stage, write_trace

    cfg = _config(args)
    if args.stage2:
        cfg.raw["stage2"]["enabled"] = True
    cfg.validate_training()
    plan1, plan2 = cfg.plan1(), cfg.plan2()

    video = load_video(cfg.path("video"))
    region = None
    if plan1.stage.value == "disentangle":
        region = load_mask_sequence(cfg.path("region"), video.shape[1:])
    pairs = []
    for ref in cfg.appearance() if plan2 else []:
        pre, edited = load_video(ref.pre), load_video(ref.edited)
        pairs.append((pre, edited, load_mask_sequence(ref.region, pre.shape[1:])))
    backbone = _backbone(cfg)
    text = caption(StubCaptioner(cfg.caption), video.frame(0))

    result = run_two_stage(backbone, video, text, region, pairs, plan1, plan2)
    adapter_path, trace_path = cfg.path("adapter"), cfg.path("trace")
    save_adapter(result.adapter, adapter_path)
    trace_path.parent.mkdir(parents=True, exist_ok=True)
    write_trace(trace_path, result)
    _keep_config(cfg, adapter_path.parent)
    print(f"trained {len(result.trace)} steps; adapter -> {adapter_path}; trace -> {trace_path}")
    return EXIT_OK


def _preserve_mask(cfg: ExperimentConfig, video) -> PixelMask | None:
    p = cfg.path("preserve_mask")
    if p.exists():
        return load_mask_sequence(p, video.shape[1:])
    r = cfg.path("region")
    if r.exists():
        region = load_mask_sequence(r, video.shape[1:])
        return make_mask(MaskKind.SELECTIVE, *video.shape[1:], region=region)
    return None


def cmd_propagate(args) -> int:
    from .backbone.text import StubCaptioner
    from .lora import attach, load_adapter
    from .propagation import propagate

    cfg = _config(args)
    adapter_path = Path(args.adapter) if args.adapter else cfg.path("adapter")
    if not adapter_path.exists():
        raise UsageError(f"adapter file not found: {adapter_path}")
    cfg.require(cfg.path("video"), cfg.path("edited_first"))
    eval_dir = Path(args.eval) if args.eval else None
    if eval_dir is not None:
        cfg.require(eval_dir)

    video = load_video(cfg.path("video"))
    edited = load_video(cfg.path("edited_first"))
    region = None
    if cfg.raw["stage1"]["kind"] == "disentangle":
        region = load_mask_sequence(cfg.path("region"), video.shape[1:])
    backbone = _backbone(cfg)
    adapter = attach(backbone.denoiser, load_adapter(adapter_path))
    out = propagate(
        backbone, video, edited, region, StubCaptioner(cfg.caption), cfg.sample_spec(), adapter
    )
    out_dir = Path(args.out) if args.out else cfg.path("output")
    save_video(out, out_dir)
    _keep_config(cfg, out_dir.parent)
    print(f"wrote {out.num_frames} frames to {out_dir}")

    if eval_dir is not None:
        source = load_video(eval_dir)
        metrics = evaluation.evaluate(
            load_video(out_dir), source, edited, _preserve_mask(cfg, source), _provider(cfg)
        )
        evaluation.write_report(cfg.path("report"), metrics)
        sys.stdout.write(evaluation.format_report(metrics))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    gen_dir = Path(args.gen) if args.gen else cfg.path("output")
    src_dir = Path(args.input) if args.input else cfg.path("video")
    cfg.require(gen_dir, src_dir)
    gen, source = load_video(gen_dir), load_video(src_dir)
    edited = None
    edited_path = Path(args.edited_first) if args.edited_first else cfg.path("edited_first")
    if edited_path.exists():
        edited = load_video(edited_path)
    if args.mask:
        mask = load_mask_sequence(args.mask, source.shape[1:])
    else:
        mask = _preserve_mask(cfg, source)
    metrics = evaluation.evaluate(gen, source, edited, mask, _provider(cfg))
    report = Path(args.report) if args.report else cfg.path("report")
    evaluation.write_report(report, metrics)
    sys.stdout.write(evaluation.format_report(metrics))
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="masklora", description="Mask-guided LoRA video edit propagation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="experiment TOML file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. stage1.steps=50")
        return sp

    sp = with_config(sub.add_parser("synth", help="generate the synthetic moving-square dataset"))
    sp.add_argument("--out")
    sp.add_argument("--frames", type=int, default=8)
    sp.add_argument("--size", type=_size, default=(32, 32), help="WIDTHxHEIGHT")
    sp.add_argument("--square", type=int, default=8)
    sp.add_argument("--start", type=int, nargs=2, default=(4, 12), metavar=("X", "Y"))
    sp.add_argument("--velocity", type=int, nargs=2, default=(2, 0), metavar=("VX", "VY"))
    sp.add_argument("--appearance-frame", type=int, action="append", default=[])
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    sp = with_config(sub.add_parser("make-mask", help="write a preservation mask frame directory"))
    sp.add_argument("--kind", choices=[k.value for k in MaskKind])
    sp.add_argument("--frames", type=int)
    sp.add_argument("--size", type=_size, help="WIDTHxHEIGHT")
    sp.add_argument("--region", help="edit-region frame directory (white = edited)")
    sp.add_argument("--rect", type=_rect, help="edit rectangle x0,y0,x1,y1 on every frame")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_make_mask)

    sp = with_config(sub.add_parser("train", help="train the LoRA adapter"))
    sp.add_argument("--stage2", action="store_true", help="enable the appearance stage")
    sp.set_defaults(func=cmd_train)

    sp = with_config(sub.add_parser("propagate", help="propagate the first-frame edit"))
    sp.add_argument("--adapter")
    sp.add_argument("--out")
    sp.add_argument("--eval", metavar="INPUT_DIR", help="also score the output against this video")
    sp.set_defaults(func=cmd_propagate)

    sp = with_config(sub.add_parser("evaluate", help="compute metrics for a generated video"))
    sp.add_argument("--gen")
    sp.add_argument("--input")
    sp.add_argument("--edited-first")
    sp.add_argument("--mask")
    sp.add_argument("--report")
    sp.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MaskLoraError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
