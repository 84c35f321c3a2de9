"""Mask-guided LoRA fine-tuning of image-to-video models for edit propagation."""

from .conditioning import (
    ConditioningBundle,
    LatentMask,
    MaskKind,
    assemble_bundle,
    build_condition_video,
    make_mask,
    substitute_first_frame,
    to_latent_mask,
)
from .lora import LoraAdapter, LoraConfig, inject, load_adapter, merge, save_adapter, unmerge
from .media import PixelMask, VideoTensor, load_mask_sequence, load_video, save_video
from .propagation import SampleSpec, propagate
from .training import Stage, TrainPlan, run_two_stage, split_clips, train

__version__ = "0.1.0"

__all__ = [
    "ConditioningBundle", "LatentMask", "MaskKind", "assemble_bundle", "build_condition_video",
    "make_mask", "substitute_first_frame", "to_latent_mask", "LoraAdapter", "LoraConfig",
    "inject", "load_adapter", "merge", "save_adapter", "unmerge", "PixelMask", "VideoTensor",
    "load_mask_sequence", "load_video", "save_video", "SampleSpec", "propagate", "Stage",
    "TrainPlan", "run_two_stage", "split_clips", "train",
]
