import numpy as np
import pytest

from masklora.evaluation import (
    MetricError,
    ToyEmbedding,
    background_mse,
    clip_score,
    format_report,
    input_similarity,
    read_report,
    region_mean_color,
    write_report,
)
from masklora.media import PixelMask, VideoTensor

from conftest import random_mask, random_video


def constant_frame(rgb, h=16, w=16):
    return VideoTensor(np.broadcast_to(np.asarray(rgb, np.float32)[:, None, None, None], (3, 1, h, w)))


def test_embedding_unit_norm(rng):
    emb = ToyEmbedding().embed(random_video(rng, t=5).data.transpose(1, 0, 2, 3))
    assert emb.shape == (5, 192)
    np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-6)


def test_clip_score_self(rng):
    first = random_video(rng, t=1)
    gen = VideoTensor(np.repeat(first.data, 6, axis=1))
    assert clip_score(gen, first, ToyEmbedding()) == pytest.approx(1.0, abs=1e-6)


def test_clip_score_orthogonal_constants():
    red, green = constant_frame((1, 0, 0)), constant_frame((0, 1, 0))
    assert clip_score(red, green, ToyEmbedding()) == pytest.approx(0.0, abs=1e-12)


def test_input_similarity_self(rng):
    v = random_video(rng, t=4)
    assert input_similarity(v, v, ToyEmbedding()) == pytest.approx(1.0, abs=1e-6)


def test_input_similarity_reversed_orthogonal_frames():
    colors = [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
    v = VideoTensor(np.concatenate([constant_frame(c).data for c in colors], axis=1))
    rev = VideoTensor(v.data[:, ::-1])
    provider = ToyEmbedding()
    sim = input_similarity(rev, v, provider)
    assert sim < 1.0
    assert sim == pytest.approx(1 / 3)  # only the middle frame aligns
    assert clip_score(rev, v.frame(0), provider) == pytest.approx(clip_score(v, v.frame(0), provider))


def test_input_similarity_length_mismatch(rng):
    with pytest.raises(MetricError):
        input_similarity(random_video(rng, t=3), random_video(rng, t=4), ToyEmbedding())


def test_background_mse_cases(rng):
    v = VideoTensor(rng.uniform(-0.8, 0.8, (3, 2, 8, 8)).astype(np.float32))
    half = np.zeros((1, 2, 8, 8), np.float32)
    half[..., :4] = 1
    mask = PixelMask(half)
    assert background_mse(v, v, mask) == 0.0
    changed = np.array(v.data)
    changed[..., 4:] += 0.1
    assert background_mse(VideoTensor(changed), v, mask) == 0.0
    shifted = VideoTensor(v.data + np.float32(0.1))
    assert background_mse(shifted, v, mask) == pytest.approx(0.01, rel=1e-5)


def test_background_mse_empty_mask(rng):
    v = random_video(rng)
    with pytest.raises(MetricError):
        background_mse(v, v, PixelMask(np.zeros((1, 4, 16, 16))))


def test_background_mse_restriction_property(rng):
    for _ in range(20):
        a, b = random_video(rng), random_video(rng)
        m = random_mask(rng)
        noise = np.where(m.data.astype(bool), 0.0, rng.uniform(-1, 1, a.shape)).astype(np.float32)
        a2 = VideoTensor(np.clip(a.data + noise, -1, 1))
        assert background_mse(a2, b, m) == background_mse(a, b, m)


def test_region_mean_color():
    v = VideoTensor(np.zeros((3, 2, 4, 4), np.float32))
    r = np.zeros((1, 2, 4, 4), np.float32)
    r[0, 1, :2, :2] = 1
    np.testing.assert_array_equal(region_mean_color(v, PixelMask(r), 1), [0, 0, 0])
    with pytest.raises(MetricError):
        region_mean_color(v, PixelMask(r), 0)


def test_report_format(tmp_path):
    metrics = {"clip_score": 0.5, "background_mse": 0.1, "input_similarity": 1.0}
    text = format_report(metrics)
    assert text.splitlines() == ["background_mse=0.1", "clip_score=0.5", "input_similarity=1.0"]
    write_report(tmp_path / "r.txt", metrics)
    assert read_report(tmp_path / "r.txt") == {k: repr(v) for k, v in metrics.items()}


def test_provider_failure_wrapped(rng):
    class Broken:
        name = "clip-adapter"

        def embed(self, frames):
            raise RuntimeError("boom")

    with pytest.raises(MetricError, match="clip-adapter"):
        clip_score(random_video(rng), random_video(rng, t=1), Broken())
