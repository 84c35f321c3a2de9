"""Latent codecs. The bundled one is an invertible 2x2 space-to-depth patchify."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import BackboneError
from ..media import VideoTensor


@dataclass(frozen=True)
class CodecSpec:
    spatial_factor: int = 2
    temporal_factor: int = 1
    latent_channels: int = 12

    def __post_init__(self):
        for name in ("spatial_factor", "temporal_factor", "latent_channels"):
            if int(getattr(self, name)) < 1:
                raise BackboneError(f"{name} must be >= 1")

    def latent_shape(self, t: int, h: int, w: int) -> tuple[int, int, int, int]:
        self.check_dims(t, h, w)
        s, k = self.spatial_factor, self.temporal_factor
        return self.latent_channels, t // k, h // s, w // s

    def check_dims(self, t: int, h: int, w: int) -> None:
        s, k = self.spatial_factor, self.temporal_factor
        if h % s or w % s:
            raise BackboneError(f"frame size {h}x{w} not divisible by spatial factor {s}")
        if t % k:
            raise BackboneError(f"{t} frames not divisible by temporal factor {k}")


class Codec(Protocol):
    """What the pipeline needs from a video autoencoder.

    Adapters for real backbones may also define ``mask_to_latent(pixel_mask)``
    to override the default pixel-to-latent mask rule.
    """

    spec: CodecSpec

    def encode(self, video) -> torch.Tensor: ...

    def decode(self, latent: torch.Tensor) -> torch.Tensor: ...


def as_pixel_tensor(video, dtype=torch.float32) -> torch.Tensor:
    if isinstance(video, VideoTensor):
        video = video.data
    if isinstance(video, np.ndarray):
        return torch.tensor(video, dtype=dtype)
    return torch.as_tensor(video, dtype=dtype)


class PatchifyCodec:
    """Space-to-depth on each frame: ``3 x T x H x W -> 12 x T x H/2 x W/2``.

    The map is a permutation of entries, so it is linear, bias-free and
    exactly invertible.
    """

    def __init__(self, patch: int = 2, channels: int = 3):
        self.patch = patch
        self.channels = channels
        self.spec = CodecSpec(patch, 1, channels * patch * patch)

    def encode(self, video, dtype=torch.float32) -> torch.Tensor:
        x = as_pixel_tensor(video, dtype)
        if x.ndim != 4 or x.shape[0] != self.channels:
            raise BackboneError(f"expected {self.channels} x T x H x W, got {tuple(x.shape)}")
        self.spec.check_dims(*x.shape[1:])
        # (C, T, H, W) -> (T, C, H, W) -> (T, C*p*p, h, w) -> (C*p*p, T, h, w)
        z = F.pixel_unshuffle(x.permute(1, 0, 2, 3), self.patch)
        return z.permute(1, 0, 2, 3).contiguous()

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        z = torch.as_tensor(latent)
        if z.ndim != 4 or z.shape[0] != self.spec.latent_channels:
            raise BackboneError(
                f"expected {self.spec.latent_channels} x T x h x w latent, got {tuple(z.shape)}"
            )
        x = F.pixel_shuffle(z.permute(1, 0, 2, 3), self.patch)
        return x.permute(1, 0, 2, 3).contiguous()
