"""Frame-embedding metrics and a mask-restricted background error."""

from __future__ import annotations

from pathlib import Path
from typing import Protocol

import numpy as np
import torch
import torch.nn.functional as F

from .errors import MaskLoraError
from .media import PixelMask, VideoTensor


class MetricError(MaskLoraError, ValueError):
    pass


class EmbeddingProvider(Protocol):
    name: str

    def embed(self, frames: np.ndarray) -> np.ndarray:
        """``T x 3 x H x W`` frames -> ``T x D`` unit-norm embeddings."""
        ...


class ToyEmbedding:
    """Average-pool each channel to ``pool x pool``, concatenate, L2-normalise."""

    def __init__(self, pool: int = 8):
        self.pool = pool
        self.name = f"toy-avgpool{pool}"

    def embed(self, frames: np.ndarray) -> np.ndarray:
        x = torch.as_tensor(np.asarray(frames, dtype=np.float64))
        feats = F.adaptive_avg_pool2d(x, self.pool).flatten(1)
        norms = feats.norm(dim=1, keepdim=True)
        if torch.any(norms == 0):
            raise MetricError("frame has an all-zero embedding")
        return (feats / norms).numpy()


def _frames(video: VideoTensor) -> np.ndarray:
    return video.data.transpose(1, 0, 2, 3)


def _embed(provider: EmbeddingProvider, video: VideoTensor) -> np.ndarray:
    try:
        emb = np.asarray(provider.embed(_frames(video)), dtype=np.float64)
    except MetricError:
        raise
    except Exception as exc:
        raise MetricError(f"embedding provider {getattr(provider, 'name', provider)!r} failed: {exc}") from exc
    if emb.shape[0] != video.num_frames:
        raise MetricError("provider returned the wrong number of embeddings")
    return emb


def clip_score(gen: VideoTensor, edited_first: VideoTensor, provider: EmbeddingProvider) -> float:
    """Mean cosine similarity of each generated frame to the edited first frame."""
    if edited_first.num_frames != 1:
        raise MetricError("edited_first must be a single frame")
    g = _embed(provider, gen)
    ref = _embed(provider, edited_first)[0]
    return float(np.mean(g @ ref))


def input_similarity(gen: VideoTensor, source: VideoTensor, provider: EmbeddingProvider) -> float:
    """Mean cosine similarity between generated and source frames at equal indices."""
    if gen.num_frames != source.num_frames:
        raise MetricError(f"frame counts differ: {gen.num_frames} vs {source.num_frames}")
    g, s = _embed(provider, gen), _embed(provider, source)
    return float(np.mean(np.sum(g * s, axis=1)))


def background_mse(gen: VideoTensor, source: VideoTensor, preserve_mask: PixelMask) -> float:
    """Mean squared pixel error over positions where ``preserve_mask == 1``."""
    if gen.shape != source.shape or not preserve_mask.matches(gen):
        raise MetricError("video and mask shapes disagree")
    keep = preserve_mask.data[0].astype(bool)
    if not keep.any():
        raise MetricError("preserve mask is empty; background error is undefined")
    diff = gen.data.astype(np.float64) - source.data.astype(np.float64)
    return float(np.mean(diff[:, keep] ** 2))


def region_mean_color(video: VideoTensor, region: PixelMask, frame: int) -> np.ndarray:
    """Mean RGB over ``region == 1`` in 0-based ``frame``."""
    sel = region.data[0, frame].astype(bool)
    if not sel.any():
        raise MetricError(f"region is empty at frame {frame}")
    return video.data[:, frame][:, sel].astype(np.float64).mean(axis=1)


def evaluate(
    gen: VideoTensor,
    source: VideoTensor,
    edited_first: VideoTensor | None = None,
    preserve_mask: PixelMask | None = None,
    provider: EmbeddingProvider | None = None,
) -> dict[str, float]:
    provider = provider or ToyEmbedding()
    report = {"input_similarity": input_similarity(gen, source, provider)}
    if edited_first is not None:
        report["clip_score"] = clip_score(gen, edited_first, provider)
    if preserve_mask is not None:
        report["background_mse"] = background_mse(gen, source, preserve_mask)
    return report


def format_report(metrics: dict) -> str:
    """Flat ``key=value`` lines, sorted by key; floats at full precision."""
    lines = []
    for key in sorted(metrics):
        value = metrics[key]
        lines.append(f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}")
    return "\n".join(lines) + "\n"


def write_report(path, metrics: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(format_report(metrics), encoding="utf-8")


def read_report(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            out[key] = value
    return out
