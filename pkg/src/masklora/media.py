"""Videos, frames and masks: in-memory types and frame-directory I/O.

Videos are stored as ``C x T x H x W`` float32 arrays in ``[-1, 1]``; masks as
``1 x T x H x W`` float32 arrays holding exactly 0 or 1 (1 = preserve).
On disk both are directories of numbered PNG frames.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import MediaError

#: Spatial dims must be divisible by this (the toy codec's patch size).
SPATIAL_MULTIPLE = 2
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp")
MASK_THRESHOLD = 128

_INDEX_RE = re.compile(r"(\d+)(?!.*\d)")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float32, copy=True, order="C")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class VideoTensor:
    """Pixel-space video ``C x T x H x W`` with values in ``[-1, 1]``.

    A single frame is the ``T == 1`` case.
    """

    data: np.ndarray
    fps: float = 24.0

    def __post_init__(self):
        data = _frozen(self.data)
        if data.ndim != 4 or data.shape[0] != 3:
            raise MediaError(f"video must be 3 x T x H x W, got shape {data.shape}")
        _, t, h, w = data.shape
        if t < 1:
            raise MediaError("video has zero frames")
        if h % SPATIAL_MULTIPLE or w % SPATIAL_MULTIPLE:
            raise MediaError(f"frame size {h}x{w} not divisible by {SPATIAL_MULTIPLE}")
        if not np.all(np.isfinite(data)) or data.min() < -1.0 or data.max() > 1.0:
            raise MediaError("video values must lie in [-1, 1]")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def num_frames(self) -> int:
        return self.data.shape[1]

    @property
    def frame_size(self) -> tuple[int, int]:
        return self.data.shape[2], self.data.shape[3]

    def frame(self, index: int) -> "VideoTensor":
        """0-based single frame as a ``T == 1`` video."""
        return VideoTensor(self.data[:, index : index + 1], fps=self.fps)

    def frames(self, start: int, stop: int) -> "VideoTensor":
        return VideoTensor(self.data[:, start:stop], fps=self.fps)


@dataclass(frozen=True, eq=False)
class PixelMask:
    """Binary ``1 x T x H x W`` mask; 1 = preserve, 0 = generate."""

    data: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data)
        if data.ndim != 4 or data.shape[0] != 1:
            raise MediaError(f"mask must be 1 x T x H x W, got shape {data.shape}")
        if not np.all((data == 0.0) | (data == 1.0)):
            raise MediaError("mask values must be exactly 0 or 1")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def num_frames(self) -> int:
        return self.data.shape[1]

    def frame(self, index: int) -> "PixelMask":
        return PixelMask(self.data[:, index : index + 1])

    def frames(self, start: int, stop: int) -> "PixelMask":
        return PixelMask(self.data[:, start:stop])

    def matches(self, video: VideoTensor) -> bool:
        return self.data.shape[1:] == video.data.shape[1:]


def frame_index(name: str) -> int:
    """Numeric frame index of a filename (the last run of digits)."""
    m = _INDEX_RE.search(Path(name).stem)
    if m is None:
        raise MediaError(f"no frame number in filename {name!r}")
    return int(m.group(1))


def list_frames(path: str | os.PathLike) -> list[Path]:
    """Image files of a frame directory, ordered by numeric index."""
    root = Path(path)
    if not root.exists():
        raise MediaError(f"path does not exist: {root}")
    if not root.is_dir():
        raise MediaError(f"not a frame directory: {root}")
    files = [p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES]
    if not files:
        raise MediaError(f"no frames found in {root}")
    files.sort(key=lambda p: (frame_index(p.name), p.name))
    return files


def _read_rgb(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def _read_container(path: Path) -> list[np.ndarray]:
    try:
        import imageio.v3 as iio
    except ImportError as exc:  # pragma: no cover - optional dependency
        raise MediaError(f"reading video containers needs imageio: {path}") from exc
    try:
        arr = iio.imread(path, index=None)
    except Exception as exc:
        raise MediaError(f"cannot decode video container {path}: {exc}") from exc
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim == 4 and arr.shape[-1] == 4:
        arr = arr[..., :3]
    return [np.asarray(f, dtype=np.uint8) for f in arr]


def _stack_uint8(frames: list[np.ndarray]) -> np.ndarray:
    if not frames:
        raise MediaError("zero frames")
    if len({f.shape for f in frames}) != 1:
        raise MediaError("inconsistent frame dimensions")
    return np.stack(frames)  # T x H x W x 3


def load_video(path: str | os.PathLike, fps: float = 24.0) -> VideoTensor:
    """Load a frame directory, a single image, or a video container.

    Storage values in ``[0, 255]`` are mapped to ``[-1, 1]``.
    """
    p = Path(path)
    if not p.exists():
        raise MediaError(f"path does not exist: {p}")
    if p.is_dir():
        frames = [_read_rgb(f) for f in list_frames(p)]
    elif p.suffix.lower() in IMAGE_SUFFIXES:
        frames = [_read_rgb(p)]
    else:
        frames = _read_container(p)
    arr = _stack_uint8(frames).astype(np.float32)
    data = arr.transpose(3, 0, 1, 2) / 127.5 - 1.0
    return VideoTensor(np.clip(data, -1.0, 1.0), fps=fps)


def to_uint8(data: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((np.asarray(data) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def _prepare_dir(path: str | os.PathLike) -> Path:
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise MediaError(f"cannot create output directory {root}: {exc}") from exc
    if not os.access(root, os.W_OK):
        raise MediaError(f"output directory is not writable: {root}")
    for stale in root.glob("frame_*.png"):
        stale.unlink()
    return root


def save_video(video: VideoTensor, path: str | os.PathLike) -> list[Path]:
    """Write ``frame_00001.png`` ... into ``path``; returns the written files."""
    root = _prepare_dir(path)
    frames = to_uint8(video.data).transpose(1, 2, 3, 0)
    out = []
    for i, frame in enumerate(frames, start=1):
        dest = root / f"frame_{i:05d}.png"
        try:
            Image.fromarray(frame, mode="RGB").save(dest)
        except OSError as exc:
            raise MediaError(f"cannot write {dest}: {exc}") from exc
        out.append(dest)
    return out


def binarize(gray: np.ndarray) -> np.ndarray:
    return (np.asarray(gray) >= MASK_THRESHOLD).astype(np.float32)


def load_mask_sequence(
    path: str | os.PathLike, expect: tuple[int, int, int] | None = None
) -> PixelMask:
    """Load grayscale mask frames (white = 1, black = 0, threshold 128).

    A directory holding a single frame is broadcast to ``expect[0]`` frames.
    """
    p = Path(path)
    files = list_frames(p) if p.is_dir() else [p]
    if not p.exists():
        raise MediaError(f"path does not exist: {p}")
    grays = []
    for f in files:
        with Image.open(f) as im:
            grays.append(np.asarray(im.convert("L"), dtype=np.uint8))
    if len({g.shape for g in grays}) != 1:
        raise MediaError("inconsistent frame dimensions")
    data = binarize(np.stack(grays))[None]  # 1 x T x H x W
    if expect is not None:
        t, h, w = expect
        if data.shape[1] == 1 and t > 1:
            data = np.repeat(data, t, axis=1)
        if data.shape[1:] != (t, h, w):
            raise MediaError(
                f"mask shape {data.shape[1:]} does not match expected {(t, h, w)}"
            )
    return PixelMask(data)


def save_mask_sequence(mask: PixelMask, path: str | os.PathLike) -> list[Path]:
    root = _prepare_dir(path)
    out = []
    for i, frame in enumerate(mask.data[0], start=1):
        dest = root / f"frame_{i:05d}.png"
        Image.fromarray((frame * 255).astype(np.uint8), mode="L").save(dest)
        out.append(dest)
    return out
