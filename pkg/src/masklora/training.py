"""LoRA training regimes: naive propagation, disentangle, appearance.

Every regime minimises the same conditioned denoising loss; they differ
only in how the target, the pseudo-video and the mask are configured.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .backbone.schedule import ScheduleMode
from .conditioning import MaskKind, build_condition_video, bundle_from_condition, make_mask
from .errors import ConditioningError, TrainingError
from .lora import LoraAdapter, LoraConfig, inject
from .media import PixelMask, VideoTensor

log = logging.getLogger(__name__)


class Stage(str, enum.Enum):
    NAIVE = "naive"
    DISENTANGLE = "disentangle"
    APPEARANCE = "appearance"


@dataclass(frozen=True, eq=False)
class TrainSample:
    target: VideoTensor
    cond_video: VideoTensor
    mask: PixelMask
    caption: str

    def __post_init__(self):
        if self.target.shape != self.cond_video.shape or not self.mask.matches(self.target):
            raise ConditioningError("target, condition video and mask shapes disagree")


@dataclass(frozen=True)
class TrainPlan:
    stage: Stage = Stage.DISENTANGLE
    steps: int = 100
    learning_rate: float = 1e-4
    seed: int = 0
    clip_split: tuple[int, int] | None = None
    lora: LoraConfig = field(default_factory=LoraConfig)
    schedule_mode: ScheduleMode = ScheduleMode.EPSILON
    batch_size: int = 1

    def __post_init__(self):
        object.__setattr__(self, "stage", Stage(self.stage))
        object.__setattr__(self, "schedule_mode", ScheduleMode(self.schedule_mode))
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.clip_split is not None:
            if self.stage is Stage.APPEARANCE:
                raise ValueError("clip_split applies to video stages only")
            object.__setattr__(self, "clip_split", tuple(int(v) for v in self.clip_split))


@dataclass(frozen=True)
class TraceRecord:
    step: int
    stage: str
    sample: int
    t: int
    loss: float

    def format(self) -> str:
        return f"step={self.step} stage={self.stage} sample={self.sample} t={self.t} loss={self.loss:.9e}"

    @classmethod
    def parse(cls, line: str) -> "TraceRecord":
        f = dict(kv.split("=", 1) for kv in line.split())
        return cls(int(f["step"]), f["stage"], int(f["sample"]), int(f["t"]), float(f["loss"]))


# -- sample construction ----------------------------------------------------


def make_naive_samples(video: VideoTensor, caption: str) -> list[TrainSample]:
    """Condition on frame 1 only, reconstruct the whole video."""
    t, h, w = video.shape[1:]
    if t < 2:
        raise ConditioningError("naive training needs at least 2 frames")
    mask = make_mask(MaskKind.DEFAULT_I2V, t, h, w)
    return [TrainSample(video, build_condition_video(video, mask), mask, caption)]


def make_disentangle_samples(
    video: VideoTensor, edit_region: PixelMask, caption: str
) -> list[TrainSample]:
    """Frame 1 kept whole; later frames keep the background, regenerate the edit region."""
    if not edit_region.matches(video):
        raise ConditioningError(
            f"edit region {edit_region.shape[1:]} does not match video {video.shape[1:]}"
        )
    mask = make_mask(MaskKind.DISENTANGLE, *video.shape[1:], region=edit_region)
    return [TrainSample(video, build_condition_video(video, mask), mask, caption)]


def make_appearance_samples(pairs, caption: str) -> list[TrainSample]:
    """One single-frame sample per ``(pre_frame, edited_frame, region)`` pair.

    The edited frame is the target; the condition is the pre-edit frame with
    the edit region blanked.
    """
    samples = []
    for i, (pre, edited, region) in enumerate(pairs):
        if pre.num_frames != 1 or edited.num_frames != 1:
            raise ConditioningError(f"appearance pair {i} must hold single frames")
        if pre.shape != edited.shape or not region.matches(pre):
            raise ConditioningError(f"appearance pair {i} has mismatched dimensions")
        if not np.any(region.data):
            raise ConditioningError(f"appearance pair {i} has an empty edit region")
        mask = make_mask(MaskKind.APPEARANCE, 1, *pre.frame_size, region=region)
        samples.append(TrainSample(edited, build_condition_video(pre, mask), mask, caption))
    return samples


def clip_spans(num_frames: int, clip_len: int, overlap: int) -> list[tuple[int, int]]:
    """1-based inclusive frame spans of overlapping equal-length clips."""
    if not 0 <= overlap < clip_len:
        raise ValueError("need clip_len > overlap >= 0")
    stride = clip_len - overlap
    if num_frames < clip_len or (num_frames - clip_len) % stride:
        raise ValueError(
            f"{num_frames} frames do not tile into clips of {clip_len} overlapping by {overlap}"
        )
    return [(s + 1, s + clip_len) for s in range(0, num_frames - clip_len + 1, stride)]


def split_clips(video: VideoTensor, clip_len: int, overlap: int) -> list[VideoTensor]:
    return [video.frames(a - 1, b) for a, b in clip_spans(video.num_frames, clip_len, overlap)]


def join_clips(clips: list[VideoTensor], overlap: int) -> VideoTensor:
    """Inverse of :func:`split_clips`: concatenate, dropping repeated overlap frames."""
    parts = [clips[0].data] + [c.data[:, overlap:] for c in clips[1:]]
    return VideoTensor(np.concatenate(parts, axis=1), fps=clips[0].fps)


def samples_for_stage(
    stage: Stage,
    video: VideoTensor,
    caption: str,
    edit_region: PixelMask | None = None,
    clip_split: tuple[int, int] | None = None,
) -> list[TrainSample]:
    """Video-stage samples, one per clip when ``clip_split`` is set."""
    stage = Stage(stage)
    if stage is Stage.APPEARANCE:
        raise ValueError("appearance samples come from make_appearance_samples")
    if stage is Stage.DISENTANGLE and edit_region is None:
        raise ConditioningError("disentangle stage needs an edit region")
    if clip_split is None:
        spans = [(1, video.num_frames)]
    else:
        spans = clip_spans(video.num_frames, *clip_split)
    samples = []
    for a, b in spans:
        clip = video.frames(a - 1, b)
        if stage is Stage.NAIVE:
            samples += make_naive_samples(clip, caption)
        else:
            samples += make_disentangle_samples(clip, edit_region.frames(a - 1, b), caption)
    return samples


# -- optimisation -----------------------------------------------------------


@dataclass
class PreparedSample:
    x0: torch.Tensor
    bundle: object


def prepare(backbone, samples: list[TrainSample]) -> list[PreparedSample]:
    dtype = backbone.denoiser.dtype
    out = []
    for s in samples:
        bundle = bundle_from_condition(s.cond_video, s.mask, backbone.prompt(s.caption), backbone.codec)
        out.append(PreparedSample(backbone.codec.encode(s.target).to(dtype), bundle))
    return out


def sample_loss(denoiser, schedule, prepared: PreparedSample, t: int, eps: torch.Tensor) -> torch.Tensor:
    """Mean squared error between the prediction and the schedule's target."""
    x_t = schedule.add_noise(prepared.x0, eps, t)
    pred = denoiser.predict(x_t, t, prepared.bundle)
    return torch.mean((pred - schedule.target(prepared.x0, eps)) ** 2)


def train(
    backbone,
    adapter: LoraAdapter,
    samples: list[TrainSample],
    plan: TrainPlan,
    step_offset: int = 0,
) -> tuple[LoraAdapter, list[TraceRecord]]:
    """Optimise the adapter's factors in place; returns it with the loss trace."""
    if not samples:
        raise TrainingError("no training samples")
    denoiser = backbone.denoiser
    schedule = backbone.schedule_for(plan.schedule_mode)
    prepared = prepare(backbone, samples)
    params = adapter.parameters()
    for p in params:
        p.requires_grad_(True)
    opt = torch.optim.Adam(params, lr=plan.learning_rate, betas=(0.9, 0.999), weight_decay=0.0)
    gen = torch.Generator().manual_seed(plan.seed)
    dtype = denoiser.dtype
    trace = []
    for step in range(1, plan.steps + 1):
        opt.zero_grad(set_to_none=True)
        total = 0.0
        for _ in range(plan.batch_size):
            i = int(torch.randint(len(prepared), (1,), generator=gen))
            t = int(torch.randint(schedule.t_min, schedule.t_max + 1, (1,), generator=gen))
            eps = torch.randn(prepared[i].x0.shape, generator=gen, dtype=dtype)
            loss = sample_loss(denoiser, schedule, prepared[i], t, eps)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(
                    f"non-finite loss {value} at step {step_offset + step} (sample {i}, t={t})"
                )
            (loss / plan.batch_size).backward()
            total += value
            trace.append(TraceRecord(step_offset + step, plan.stage.value, i, t, value))
        opt.step()
        if step % 50 == 0:
            log.info("%s step %d loss %.5f", plan.stage.value, step, total / plan.batch_size)
    for p in params:
        p.requires_grad_(False)
    stages = adapter.meta.setdefault("stages", [])
    stages.append({"stage": plan.stage.value, "steps": plan.steps, "learning_rate": plan.learning_rate})
    adapter.meta["schedule_mode"] = plan.schedule_mode.value
    return adapter, trace


@dataclass
class TwoStageResult:
    adapter: LoraAdapter
    trace: list[TraceRecord]
    checkpoints: dict[str, str]  # stage name -> adapter state fingerprint at its end


def run_two_stage(
    backbone,
    video: VideoTensor,
    caption: str,
    edit_region: PixelMask | None = None,
    appearance_pairs=None,
    plan1: TrainPlan | None = None,
    plan2: TrainPlan | None = None,
    adapter: LoraAdapter | None = None,
) -> TwoStageResult:
    """Stage 1 on the input video, then (optionally) stage 2 on appearance frames.

    Stage 2 continues from the same adapter state stage 1 ended in.
    """
    plan1 = plan1 or TrainPlan()
    if plan2 is not None:
        if not appearance_pairs:
            raise ConditioningError("stage 2 needs appearance pairs")
        plan2 = replace(plan2, stage=Stage.APPEARANCE)
    if adapter is None:
        gen = torch.Generator().manual_seed(plan1.seed)
        adapter = inject(backbone.denoiser, plan1.lora, generator=gen)
    checkpoints = {"init": adapter.state_fingerprint()}
    samples = samples_for_stage(plan1.stage, video, caption, edit_region, plan1.clip_split)
    adapter, trace = train(backbone, adapter, samples, plan1)
    checkpoints[plan1.stage.value] = adapter.state_fingerprint()
    if plan2 is not None:
        samples2 = make_appearance_samples(appearance_pairs, caption)
        adapter, trace2 = train(backbone, adapter, samples2, plan2, step_offset=len(trace) and trace[-1].step)
        trace += trace2
        checkpoints[plan2.stage.value] = adapter.state_fingerprint()
    return TwoStageResult(adapter, trace, checkpoints)


def write_trace(path, result: TwoStageResult) -> None:
    """Line-delimited trace; ``#`` lines carry stage-end adapter fingerprints."""
    lines = []
    by_stage = {}
    for rec in result.trace:
        by_stage.setdefault(rec.stage, []).append(rec)
    for stage, recs in by_stage.items():
        lines += [r.format() for r in recs]
        if stage in result.checkpoints:
            lines.append(f"# end stage={stage} adapter={result.checkpoints[stage]}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace(path) -> list[TraceRecord]:
    with open(path, encoding="utf-8") as fh:
        return [TraceRecord.parse(line) for line in fh if line.strip() and not line.startswith("#")]
