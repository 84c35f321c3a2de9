"""Backbone interfaces and the bundled toy I2V model."""

from .codec import Codec, CodecSpec, PatchifyCodec
from .denoiser import DenoiserConfig, ToyDenoiser, predict
from .schedule import NoiseSchedule, ScheduleMode, add_noise
from .text import (
    P_STAR,
    CaptionProvider,
    PromptTokens,
    StubCaptioner,
    ToyTokenizer,
    caption,
    compose_prompt,
)
from .toy import ToyBackbone, load_denoiser, load_toy_backbone, random_backbone, save_denoiser

__all__ = [
    "Codec", "CodecSpec", "PatchifyCodec", "DenoiserConfig", "ToyDenoiser", "predict",
    "NoiseSchedule", "ScheduleMode", "add_noise", "P_STAR", "CaptionProvider", "PromptTokens",
    "StubCaptioner", "ToyTokenizer", "caption", "compose_prompt", "ToyBackbone",
    "load_denoiser", "load_toy_backbone", "random_backbone", "save_denoiser",
]
