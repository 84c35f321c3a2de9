"""Seeded synthetic moving-square videos with ground-truth edit regions."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import MediaError
from .media import PixelMask, VideoTensor, save_mask_sequence, save_video

Color = tuple[float, float, float]


@dataclass(frozen=True)
class SquareScene:
    """A square moving at constant velocity over a static textured background.

    ``start`` and ``velocity`` are ``(x, y)`` in pixels and pixels/frame;
    ``appearance_frames`` are 1-based indices of frames that also get an
    edited reference version.
    """

    frames: int = 8
    height: int = 32
    width: int = 32
    size: int = 8
    start: tuple[int, int] = (4, 12)
    velocity: tuple[int, int] = (2, 0)
    color: Color = (0.9, -0.7, -0.7)
    edit_color: Color = (-0.7, -0.5, 0.9)
    reference_color: Color | None = None
    background_amplitude: float = 0.5
    appearance_frames: tuple[int, ...] = ()

    def square_origin(self, t: int) -> tuple[int, int]:
        """Top-left ``(x, y)`` of the square in 0-based frame ``t``."""
        return self.start[0] + t * self.velocity[0], self.start[1] + t * self.velocity[1]

    def validate(self) -> None:
        if self.frames < 1 or self.size < 1:
            raise MediaError("degenerate geometry: frames and size must be >= 1")
        if self.height % 2 or self.width % 2:
            raise MediaError("degenerate geometry: frame size must be even")
        if self.size >= min(self.height, self.width):
            raise MediaError("degenerate geometry: square does not fit in the frame")
        for t in range(self.frames):
            x, y = self.square_origin(t)
            if x < 0 or y < 0 or x + self.size > self.width or y + self.size > self.height:
                raise MediaError(f"degenerate geometry: square leaves the frame at frame {t + 1}")
        for k in self.appearance_frames:
            if not 1 <= k <= self.frames:
                raise MediaError(f"appearance frame {k} outside 1..{self.frames}")
        for c in (self.color, self.edit_color, self.reference_color or self.edit_color):
            if len(c) != 3 or min(c) < -1 or max(c) > 1:
                raise MediaError("colors must be RGB triples in [-1, 1]")


@dataclass(frozen=True)
class AppearancePair:
    frame: int  # 1-based
    pre: VideoTensor
    edited: VideoTensor
    region: PixelMask


@dataclass(frozen=True)
class SynthData:
    scene: SquareScene
    seed: int
    video: VideoTensor
    region: PixelMask
    edited_first: VideoTensor
    appearance: list[AppearancePair] = field(default_factory=list)


def smooth_texture(rng: np.random.Generator, h: int, w: int, amplitude: float, cells: int = 4):
    """Bilinear upsampling of a coarse random RGB grid, values within ``+-amplitude``."""
    coarse = rng.uniform(-amplitude, amplitude, size=(3, cells + 1, cells + 1))
    ys = np.linspace(0, cells, h)
    xs = np.linspace(0, cells, w)
    y0 = np.minimum(ys.astype(int), cells - 1)
    x0 = np.minimum(xs.astype(int), cells - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    c00 = coarse[:, y0][:, :, x0]
    c01 = coarse[:, y0][:, :, x0 + 1]
    c10 = coarse[:, y0 + 1][:, :, x0]
    c11 = coarse[:, y0 + 1][:, :, x0 + 1]
    top = c00 * (1 - fx) + c01 * fx
    bottom = c10 * (1 - fx) + c11 * fx
    return (top * (1 - fy) + bottom * fy).astype(np.float32)


def square_region(scene: SquareScene) -> np.ndarray:
    region = np.zeros((1, scene.frames, scene.height, scene.width), np.float32)
    for t in range(scene.frames):
        x, y = scene.square_origin(t)
        region[0, t, y : y + scene.size, x : x + scene.size] = 1.0
    return region


def _paint(background: np.ndarray, region: np.ndarray, color: Color) -> np.ndarray:
    """``background``: 3 x H x W; ``region``: 1 x T x H x W."""
    t = region.shape[1]
    video = np.repeat(background[:, None], t, axis=1)
    col = np.asarray(color, np.float32)[:, None, None, None]
    return np.where(region.astype(bool), col, video).astype(np.float32)


def generate(scene: SquareScene, seed: int = 0) -> SynthData:
    scene.validate()
    rng = np.random.default_rng(seed)
    background = smooth_texture(rng, scene.height, scene.width, scene.background_amplitude)
    region = square_region(scene)
    video = _paint(background, region, scene.color)
    edited_first = _paint(background, region[:, :1], scene.edit_color)
    reference = scene.reference_color or scene.edit_color
    pairs = []
    for k in scene.appearance_frames:
        r = region[:, k - 1 : k]
        pairs.append(
            AppearancePair(
                frame=k,
                pre=VideoTensor(video[:, k - 1 : k]),
                edited=VideoTensor(_paint(background, r, reference)),
                region=PixelMask(r),
            )
        )
    return SynthData(
        scene=scene,
        seed=seed,
        video=VideoTensor(video),
        region=PixelMask(region),
        edited_first=VideoTensor(edited_first),
        appearance=pairs,
    )


def write_synth(data: SynthData, out_dir) -> dict[str, Path]:
    """Write the dataset as frame directories; returns the written locations.

    Layout: ``video/``, ``region/``, ``edited_first/`` and, per appearance
    frame ``k``, ``appearance/frame_{k:05d}/{pre,edited,region}/``.
    """
    root = Path(out_dir)
    paths = {"video": root / "video", "region": root / "region", "edited_first": root / "edited_first"}
    save_video(data.video, paths["video"])
    save_mask_sequence(data.region, paths["region"])
    save_video(data.edited_first, paths["edited_first"])
    for pair in data.appearance:
        base = root / "appearance" / f"frame_{pair.frame:05d}"
        save_video(pair.pre, base / "pre")
        save_video(pair.edited, base / "edited")
        save_mask_sequence(pair.region, base / "region")
        paths[f"appearance_{pair.frame}"] = base
    manifest = {"seed": data.seed, "scene": asdict(data.scene)}
    (root / "scene.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return paths


def random_scene_video(
    rng: np.random.Generator, frames: int, height: int, width: int, max_objects: int = 2
) -> tuple[np.ndarray, np.ndarray, list[Color]]:
    """Random squares with random motion over a random texture.

    Returns ``(video 3xTxHxW, union region 1xTxHxW, object colors)``.
    """
    background = smooth_texture(rng, height, width, rng.uniform(0.2, 0.7))
    video = np.repeat(background[:, None], frames, axis=1)
    region = np.zeros((1, frames, height, width), np.float32)
    colors = []
    for _ in range(rng.integers(1, max_objects + 1)):
        size = int(rng.integers(2, max(3, min(height, width) // 3)))
        vx, vy = rng.integers(-2, 3, size=2)
        x = float(rng.integers(0, width - size))
        y = float(rng.integers(0, height - size))
        color = tuple(float(c) for c in rng.uniform(-1, 1, size=3))
        colors.append(color)
        for t in range(frames):
            if not 0 <= x + vx <= width - size:
                vx = -vx
            if not 0 <= y + vy <= height - size:
                vy = -vy
            if t:
                x, y = x + vx, y + vy
            xi, yi = int(x), int(y)
            video[:, t, yi : yi + size, xi : xi + size] = np.asarray(color, np.float32)[:, None, None]
            region[0, t, yi : yi + size, xi : xi + size] = 1.0
    return video.astype(np.float32), region, colors
