"""Pseudo-video and spatiotemporal mask construction.

Masks use 1 = preserve conditioning content, 0 = regenerate. Edit regions
supplied by users use the opposite sense (1 inside the edit) and are
inverted here.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import torch

from .backbone.codec import CodecSpec
from .backbone.text import PromptTokens
from .errors import ConditioningError
from .media import PixelMask, VideoTensor


class MaskKind(str, enum.Enum):
    DEFAULT_I2V = "default"
    NO_PRESERVATION = "none"
    ALL_PRESERVATION = "all"
    SELECTIVE = "selective"
    DISENTANGLE = "disentangle"
    APPEARANCE = "appearance"


_NEEDS_REGION = {MaskKind.SELECTIVE, MaskKind.DISENTANGLE, MaskKind.APPEARANCE}


@dataclass(frozen=True, eq=False)
class LatentMask:
    data: np.ndarray  # 1 x T_lat x h x w

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, copy=True)
        if data.ndim != 4 or data.shape[0] != 1:
            raise ConditioningError(f"latent mask must be 1 x T x h x w, got {data.shape}")
        if not np.all((data == 0.0) | (data == 1.0)):
            raise ConditioningError("latent mask values must be exactly 0 or 1")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True, eq=False)
class ConditioningBundle:
    """The denoiser's condition: masked latent video, latent mask, prompt."""

    cond_latent: torch.Tensor  # C_lat x T_lat x h x w
    mask: LatentMask
    prompt_tokens: PromptTokens

    def __post_init__(self):
        if tuple(self.cond_latent.shape[1:]) != tuple(self.mask.shape[1:]):
            raise ConditioningError(
                f"cond latent {tuple(self.cond_latent.shape)} and mask {self.mask.shape} disagree"
            )
        if not isinstance(self.prompt_tokens, PromptTokens):
            raise ConditioningError("prompt_tokens must be PromptTokens")

    @property
    def mask_tensor(self) -> torch.Tensor:
        return torch.tensor(self.mask.data)


def build_condition_video(video: VideoTensor, mask: PixelMask) -> VideoTensor:
    """``mask * video``; exactly zero wherever the mask is zero."""
    if not mask.matches(video):
        raise ConditioningError(
            f"mask {mask.shape[1:]} does not match video {video.shape[1:]}"
        )
    out = np.where(mask.data.astype(bool), video.data, np.float32(0.0))
    return VideoTensor(out, fps=video.fps)


def make_mask(
    kind: MaskKind | str, t: int, h: int, w: int, region: PixelMask | None = None
) -> PixelMask:
    """Preservation mask for one of the supported configurations.

    ``region`` marks the edited area (1 inside the edit), one frame per
    mask frame. A single-frame region is broadcast over time.
    """
    kind = MaskKind(kind)
    if t < 1 or h < 1 or w < 1:
        raise ConditioningError(f"invalid mask geometry {t}x{h}x{w}")
    if kind is MaskKind.APPEARANCE and t != 1:
        raise ConditioningError("appearance masks are single-frame (T must be 1)")

    keep = None
    if kind in _NEEDS_REGION:
        if region is None:
            raise ConditioningError(f"mask kind {kind.value!r} needs an edit region")
        r = region.data
        if r.shape[2:] != (h, w) or r.shape[1] not in (1, t):
            raise ConditioningError(f"region shape {r.shape[1:]} does not fit {(t, h, w)}")
        keep = np.broadcast_to(1.0 - r, (1, t, h, w))

    if kind is MaskKind.DEFAULT_I2V:
        m = np.zeros((1, t, h, w), np.float32)
        m[:, 0] = 1.0
    elif kind is MaskKind.NO_PRESERVATION:
        m = np.zeros((1, t, h, w), np.float32)
    elif kind is MaskKind.ALL_PRESERVATION:
        m = np.ones((1, t, h, w), np.float32)
    elif kind is MaskKind.DISENTANGLE:
        m = np.array(keep, np.float32)
        m[:, 0] = 1.0
    else:  # SELECTIVE, APPEARANCE
        m = np.array(keep, np.float32)
    return PixelMask(m)


def to_latent_mask(mask: PixelMask, spec: CodecSpec) -> LatentMask:
    """A latent cell is 1 iff every pixel (and frame) it covers is 1."""
    _, t, h, w = mask.shape
    s, k = spec.spatial_factor, spec.temporal_factor
    if h % s or w % s or t % k:
        raise ConditioningError(
            f"mask {t}x{h}x{w} not divisible by factors (temporal {k}, spatial {s})"
        )
    blocks = mask.data.reshape(1, t // k, k, h // s, s, w // s, s)
    return LatentMask(blocks.min(axis=(2, 4, 6)))


def latent_mask_for(mask: PixelMask, codec) -> LatentMask:
    override = getattr(codec, "mask_to_latent", None)
    if override is not None:
        return override(mask)
    return to_latent_mask(mask, codec.spec)


def assemble_bundle(
    video: VideoTensor, mask: PixelMask, prompt_tokens: PromptTokens, codec
) -> ConditioningBundle:
    cond = build_condition_video(video, mask)
    return ConditioningBundle(
        cond_latent=codec.encode(cond),
        mask=latent_mask_for(mask, codec),
        prompt_tokens=prompt_tokens,
    )


def bundle_from_condition(
    cond_video: VideoTensor, mask: PixelMask, prompt_tokens: PromptTokens, codec
) -> ConditioningBundle:
    """Bundle from an already-built pseudo-video (e.g. after first-frame substitution)."""
    if not mask.matches(cond_video):
        raise ConditioningError("mask does not match condition video")
    return ConditioningBundle(
        cond_latent=codec.encode(cond_video),
        mask=latent_mask_for(mask, codec),
        prompt_tokens=prompt_tokens,
    )


def substitute_first_frame(video: VideoTensor, edited: VideoTensor) -> VideoTensor:
    """Replace frame 1 of ``video`` with the single-frame ``edited``."""
    if edited.num_frames != 1:
        raise ConditioningError(f"edited frame must be single-frame, got T={edited.num_frames}")
    if edited.frame_size != video.frame_size:
        raise ConditioningError(
            f"edited frame {edited.frame_size} does not match video frames {video.frame_size}"
        )
    data = np.array(video.data)
    data[:, 0] = edited.data[:, 0]
    return VideoTensor(data, fps=video.fps)
