import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from masklora.backbone import CodecSpec, PatchifyCodec, compose_prompt, ToyTokenizer, P_STAR
from masklora.conditioning import (
    MaskKind,
    assemble_bundle,
    build_condition_video,
    make_mask,
    substitute_first_frame,
    to_latent_mask,
)
from masklora.errors import ConditioningError
from masklora.media import PixelMask, VideoTensor

from conftest import random_mask, random_video
from oracles import latent_mask_oracle


def square_region(t, h, w, lo, hi):
    r = np.zeros((1, t, h, w), np.float32)
    r[:, :, lo:hi, lo:hi] = 1.0
    return PixelMask(r)


class TestBuildConditionVideo:
    def test_all_ones_is_identity(self, rng):
        v = random_video(rng)
        out = build_condition_video(v, make_mask("all", 4, 16, 16))
        np.testing.assert_array_equal(out.data, v.data)

    def test_all_zeros_gives_blank(self, rng):
        out = build_condition_video(random_video(rng), make_mask("none", 4, 16, 16))
        assert not np.any(out.data)

    def test_default_i2v_keeps_only_frame_one(self, rng):
        v = random_video(rng, t=13, h=8, w=8)
        out = build_condition_video(v, make_mask(MaskKind.DEFAULT_I2V, 13, 8, 8))
        np.testing.assert_array_equal(out.data[:, 0], v.data[:, 0])
        assert not np.any(out.data[:, 1:])

    def test_shape_mismatch(self, rng):
        with pytest.raises(ConditioningError):
            build_condition_video(random_video(rng), make_mask("all", 3, 16, 16))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_zero_outside_preserved(self, seed):
        r = np.random.default_rng(seed)
        v, m = random_video(r, 2, 6, 8), random_mask(r, 2, 6, 8)
        out = build_condition_video(v, m)
        assert not np.any(out.data * (1 - m.data))
        np.testing.assert_array_equal(out.data * m.data, v.data * m.data)


class TestMakeMask:
    def test_disentangle_counts(self):
        region = square_region(4, 8, 8, 2, 6)
        m = make_mask(MaskKind.DISENTANGLE, 4, 8, 8, region)
        sums = m.data[0].sum(axis=(1, 2))
        assert sums.tolist() == [64, 48, 48, 48]

    def test_default_i2v_total(self):
        assert make_mask("default", 13, 8, 8).data.sum() == 64

    def test_appearance_fraction(self):
        r = np.zeros((1, 1, 8, 8), np.float32)
        r[:, :, :4, :4] = 1
        m = make_mask("appearance", 1, 8, 8, PixelMask(r))
        assert m.data.mean() == 0.75

    def test_appearance_rejects_multiframe(self):
        with pytest.raises(ConditioningError):
            make_mask("appearance", 2, 8, 8, square_region(2, 8, 8, 0, 2))

    def test_region_required(self):
        for kind in ("selective", "disentangle", "appearance"):
            with pytest.raises(ConditioningError):
                make_mask(kind, 1, 8, 8)

    def test_region_shape_mismatch(self):
        with pytest.raises(ConditioningError):
            make_mask("selective", 4, 8, 8, square_region(4, 8, 6, 0, 2))

    def test_disentangle_empty_region_is_all_ones(self):
        empty = PixelMask(np.zeros((1, 5, 8, 8), np.float32))
        np.testing.assert_array_equal(
            make_mask("disentangle", 5, 8, 8, empty).data, make_mask("all", 5, 8, 8).data
        )

    def test_selective_full_region_is_no_preservation(self):
        full = PixelMask(np.ones((1, 3, 8, 8), np.float32))
        np.testing.assert_array_equal(
            make_mask("selective", 3, 8, 8, full).data, make_mask("none", 3, 8, 8).data
        )

    def test_disentangle_full_region_is_default(self):
        full = PixelMask(np.ones((1, 3, 8, 8), np.float32))
        np.testing.assert_array_equal(
            make_mask("disentangle", 3, 8, 8, full).data, make_mask("default", 3, 8, 8).data
        )


class TestLatentMask:
    def test_all_ones(self):
        lm = to_latent_mask(make_mask("all", 2, 8, 8), CodecSpec(2, 1, 12))
        assert lm.shape == (1, 2, 4, 4) and lm.data.min() == 1

    def test_single_zero_pixel(self):
        d = np.ones((1, 1, 8, 8), np.float32)
        d[0, 0, 5, 2] = 0
        lm = to_latent_mask(PixelMask(d), CodecSpec(2, 1, 12))
        assert (lm.data == 0).sum() == 1 and lm.data[0, 0, 2, 1] == 0

    def test_disentangle_matches_oracle(self):
        region = square_region(4, 16, 16, 3, 9)  # odd edge -> dilated footprint
        m = make_mask("disentangle", 4, 16, 16, region)
        lm = to_latent_mask(m, CodecSpec(2, 1, 12))
        np.testing.assert_array_equal(lm.data, latent_mask_oracle(m.data, 2, 1))
        assert lm.data[0, 0].min() == 1
        assert lm.data[0, 1, 1:5, 1:5].max() == 0  # covers pixels 3..8 -> cells 1..4
        assert lm.data[0, 1].sum() == 64 - 16

    def test_temporal_factor_against_oracle(self, rng):
        m = random_mask(rng, t=6, h=8, w=8, p=0.9)
        lm = to_latent_mask(m, CodecSpec(2, 3, 12))
        np.testing.assert_array_equal(lm.data, latent_mask_oracle(m.data, 2, 3))

    def test_indivisible(self):
        with pytest.raises(ConditioningError):
            to_latent_mask(make_mask("all", 3, 8, 8), CodecSpec(2, 2, 12))
        with pytest.raises(ConditioningError):
            to_latent_mask(make_mask("all", 1, 8, 8), CodecSpec(3, 1, 12))

    @settings(max_examples=40, deadline=None)
    @given(
        a=arrays(np.float32, (1, 2, 4, 6), elements=st.sampled_from([0.0, 1.0])),
        b=arrays(np.float32, (1, 2, 4, 6), elements=st.sampled_from([0.0, 1.0])),
    )
    def test_monotone(self, a, b):
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        spec = CodecSpec(2, 1, 12)
        assert np.all(to_latent_mask(PixelMask(lo), spec).data <= to_latent_mask(PixelMask(hi), spec).data)


class TestBundle:
    def _prompt(self):
        return compose_prompt(P_STAR, "a car", ToyTokenizer())

    def test_all_ones_encodes_video(self, rng):
        codec, v = PatchifyCodec(), random_video(rng)
        b = assemble_bundle(v, make_mask("all", 4, 16, 16), self._prompt(), codec)
        assert torch.equal(b.cond_latent, codec.encode(v))
        assert b.cond_latent.shape[1:] == b.mask.shape[1:]

    def test_all_zeros_encodes_blank(self, rng):
        codec = PatchifyCodec()
        b = assemble_bundle(random_video(rng), make_mask("none", 4, 16, 16), self._prompt(), codec)
        assert torch.equal(b.cond_latent, codec.encode(VideoTensor(np.zeros((3, 4, 16, 16)))))
        assert b.mask.data.max() == 0

    def test_codec_override_hook(self, rng):
        class Custom(PatchifyCodec):
            def mask_to_latent(self, mask):
                return to_latent_mask(make_mask("all", *mask.shape[1:]), self.spec)

        b = assemble_bundle(random_video(rng), make_mask("none", 4, 16, 16), self._prompt(), Custom())
        assert b.mask.data.min() == 1


class TestSubstituteFirstFrame:
    def test_noop(self, rng):
        v = random_video(rng, t=3)
        np.testing.assert_array_equal(substitute_first_frame(v, v.frame(0)).data, v.data)

    def test_only_first_changes(self, rng):
        v = random_video(rng, t=3)
        e = VideoTensor(np.zeros((3, 1, 16, 16), np.float32))
        out = substitute_first_frame(v, e)
        assert not np.any(out.data[:, 0])
        np.testing.assert_array_equal(out.data[:, 1:], v.data[:, 1:])

    def test_size_mismatch(self, rng):
        with pytest.raises(ConditioningError):
            substitute_first_frame(random_video(rng, t=3), random_video(rng, t=1, h=8, w=16))
