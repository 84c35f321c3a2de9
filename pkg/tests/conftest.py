import numpy as np
import pytest
import torch

from masklora.backbone import load_toy_backbone, random_backbone
from masklora.media import PixelMask, VideoTensor


def random_video(rng, t=4, h=16, w=16):
    return VideoTensor(rng.uniform(-1, 1, size=(3, t, h, w)).astype(np.float32))


def random_mask(rng, t=4, h=16, w=16, p=0.5):
    return PixelMask((rng.random((1, t, h, w)) < p).astype(np.float32))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_backbone():
    return random_backbone(seed=0)


@pytest.fixture
def pretrained():
    return load_toy_backbone()


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
