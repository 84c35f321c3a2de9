"""Edit propagation: sample a new video from the edited conditioning."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .backbone.schedule import NoiseSchedule, ScheduleMode
from .backbone.text import StubCaptioner, caption
from .conditioning import (
    ConditioningBundle,
    MaskKind,
    build_condition_video,
    bundle_from_condition,
    make_mask,
    substitute_first_frame,
)
from .errors import ConditioningError
from .media import PixelMask, VideoTensor


class UntrainedAdapterWarning(UserWarning):
    pass


class ScheduleMismatchWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SampleSpec:
    num_steps: int = 30
    guidance_scale: float = 1.0
    seed: int = 0
    schedule_mode: ScheduleMode = ScheduleMode.EPSILON

    def __post_init__(self):
        object.__setattr__(self, "schedule_mode", ScheduleMode(self.schedule_mode))
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if self.guidance_scale < 1:
            raise ValueError("guidance_scale must be >= 1")


def _predict(denoiser, x, t, cond):
    fn = getattr(denoiser, "predict", denoiser)
    return fn(x, t, cond)


def sample_step(
    denoiser,
    x_t: torch.Tensor,
    t: int,
    t_next: int,
    cond: ConditioningBundle,
    schedule: NoiseSchedule,
    spec: SampleSpec | None = None,
    uncond: ConditioningBundle | None = None,
) -> torch.Tensor:
    """One deterministic step from ``t`` to ``t_next``.

    Epsilon mode is a DDIM update through the predicted clean latent;
    rectified flow is an Euler step along the predicted velocity.
    """
    if t_next >= t:
        raise ValueError(f"t_next ({t_next}) must be smaller than t ({t})")
    if spec is not None and spec.schedule_mode is not schedule.mode:
        warnings.warn(
            f"sampling in {spec.schedule_mode.value} mode with a {schedule.mode.value} schedule",
            ScheduleMismatchWarning,
            stacklevel=2,
        )
    pred = _predict(denoiser, x_t, t, cond)
    scale = spec.guidance_scale if spec is not None else 1.0
    if uncond is not None and scale != 1.0:
        base = _predict(denoiser, x_t, t, uncond)
        pred = base + scale * (pred - base)
    if schedule.mode is ScheduleMode.EPSILON:
        a, b = schedule.signal_noise(t)
        a_next, b_next = schedule.signal_noise(t_next)
        x0_hat = (x_t - b * pred) / a
        return a_next * x0_hat + b_next * pred
    return x_t + (schedule.sigma(t_next) - schedule.sigma(t)) * pred


@torch.no_grad()
def sample(
    denoiser,
    cond: ConditioningBundle,
    schedule: NoiseSchedule,
    spec: SampleSpec | None = None,
    uncond: ConditioningBundle | None = None,
    dtype: torch.dtype | None = None,
) -> torch.Tensor:
    """Integrate from unit Gaussian noise to a clean latent shaped like ``cond``."""
    spec = spec or SampleSpec(schedule_mode=schedule.mode)
    dtype = dtype or getattr(denoiser, "dtype", torch.float32)
    gen = torch.Generator().manual_seed(spec.seed)
    x = torch.randn(tuple(cond.cond_latent.shape), generator=gen, dtype=dtype)
    steps = schedule.sampling_timesteps(spec.num_steps)
    for t, t_next in zip(steps, steps[1:]):
        x = sample_step(denoiser, x, t, t_next, cond, schedule, spec, uncond)
    return x


def inference_mask(video: VideoTensor, edit_region: PixelMask | None) -> PixelMask:
    t, h, w = video.shape[1:]
    if edit_region is None:
        return make_mask(MaskKind.DEFAULT_I2V, t, h, w)
    if not edit_region.matches(video):
        raise ConditioningError("edit region does not match video")
    return make_mask(MaskKind.DISENTANGLE, t, h, w, region=edit_region)


def propagate(
    backbone,
    video: VideoTensor,
    edited_first: VideoTensor,
    edit_region: PixelMask | None = None,
    caption_provider=None,
    spec: SampleSpec | None = None,
    adapter=None,
) -> VideoTensor:
    """Generate the edited video for an adapted backbone.

    The mask is the one used in training (disentangle when a region is
    given, first-frame-only otherwise); the pseudo-video gets the edited
    frame 1, and the prompt is ``[p*]`` plus a caption of the edited frame.
    """
    spec = spec or SampleSpec()
    if edited_first.num_frames != 1 or edited_first.frame_size != video.frame_size:
        raise ConditioningError("edited first frame must be a single frame of the video's size")
    if adapter is not None:
        if adapter.is_untrained():
            warnings.warn("LoRA adapter is untrained (B is all zero)", UntrainedAdapterWarning, stacklevel=2)
        trained_mode = adapter.meta.get("schedule_mode")
        if trained_mode is not None and trained_mode != spec.schedule_mode.value:
            warnings.warn(
                f"adapter trained in {trained_mode} mode, sampling in {spec.schedule_mode.value}",
                ScheduleMismatchWarning,
                stacklevel=2,
            )
    mask = inference_mask(video, edit_region)
    cond_video = substitute_first_frame(build_condition_video(video, mask), edited_first)
    provider = caption_provider or StubCaptioner()
    prompt = backbone.prompt(caption(provider, edited_first))
    bundle = bundle_from_condition(cond_video, mask, prompt, backbone.codec)
    uncond = None
    if spec.guidance_scale != 1.0:
        uncond = ConditioningBundle(bundle.cond_latent, bundle.mask, backbone.prompt(""))
    schedule = backbone.schedule_for(spec.schedule_mode)
    latent = sample(backbone.denoiser, bundle, schedule, spec, uncond)
    pixels = backbone.codec.decode(latent).to(torch.float32).numpy()
    return VideoTensor(np.clip(pixels, -1.0, 1.0), fps=video.fps)
