"""Small builders shared by test modules."""

import numpy as np
import torch

from masklora.conditioning import assemble_bundle, make_mask
from masklora.media import VideoTensor


def toy_bundle(backbone, rng, t=2, h=8, w=8, kind="default", caption="a red square"):
    video = VideoTensor(rng.uniform(-1, 1, size=(3, t, h, w)).astype(np.float32))
    mask = make_mask(kind, t, h, w)
    return assemble_bundle(video, mask, backbone.prompt(caption), backbone.codec)


def random_latent(bundle, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(tuple(bundle.cond_latent.shape), generator=g, dtype=dtype)
