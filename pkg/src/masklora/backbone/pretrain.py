"""Pretrain the toy denoiser as a generic I2V model on random synthetic clips.

Mask configurations follow ordinary I2V training: mostly first-frame
conditioning, occasionally none or full preservation. Spatially varying
masks are deliberately absent.

    python -m masklora.backbone.pretrain --steps 4000 --out weights/toy_denoiser.mlw
"""

from __future__ import annotations

import argparse
import logging
import time

import numpy as np
import torch

from ..conditioning import MaskKind, build_condition_video, make_mask, to_latent_mask
from ..media import VideoTensor
from ..synth import random_scene_video
from .codec import PatchifyCodec
from .denoiser import DenoiserConfig, ToyDenoiser
from .schedule import NoiseSchedule
from .text import P_STAR, ToyTokenizer
from .toy import BUNDLED_WEIGHTS, save_denoiser

log = logging.getLogger(__name__)

# (frames, height, width, weight)
SHAPES = ((8, 16, 16, 0.35), (4, 32, 32, 0.35), (8, 32, 32, 0.15), (2, 32, 32, 0.15))
MASK_KINDS = ((MaskKind.DEFAULT_I2V, 0.7), (MaskKind.ALL_PRESERVATION, 0.2), (MaskKind.NO_PRESERVATION, 0.1))
COLOR_WORDS = {
    "red": (1, -1, -1), "green": (-1, 1, -1), "blue": (-1, -1, 1), "yellow": (1, 1, -1),
    "cyan": (-1, 1, 1), "magenta": (1, -1, 1), "white": (1, 1, 1), "black": (-1, -1, -1),
}


def color_word(color) -> str:
    c = np.asarray(color)
    return min(COLOR_WORDS, key=lambda k: float(np.sum((np.asarray(COLOR_WORDS[k]) - c) ** 2)))


def make_batch(rng: np.random.Generator, batch: int, codec, tokenizer):
    frames, h, w, _ = SHAPES[rng.choice(len(SHAPES), p=[s[3] for s in SHAPES])]
    x0, cond, mask, tokens = [], [], [], []
    for _ in range(batch):
        video, _, colors = random_scene_video(rng, frames, h, w)
        kind = MASK_KINDS[rng.choice(len(MASK_KINDS), p=[k[1] for k in MASK_KINDS])][0]
        v = VideoTensor(np.clip(video, -1, 1))
        m = make_mask(kind, frames, h, w)
        x0.append(codec.encode(v))
        cond.append(codec.encode(build_condition_video(v, m)))
        mask.append(torch.tensor(to_latent_mask(m, codec.spec).data))
        tokens.append([P_STAR, *tokenizer(f"{color_word(colors[0])} square")])
    return torch.stack(x0), torch.stack(cond), torch.stack(mask), torch.tensor(tokens)


def pretrain(
    steps: int = 4000, seed: int = 0, batch: int = 4, lr: float = 1e-3, log_every: int = 200
) -> ToyDenoiser:
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    codec, tokenizer = PatchifyCodec(), ToyTokenizer()
    schedule = NoiseSchedule.linear()
    model = ToyDenoiser(DenoiserConfig())
    opt = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=0.0)
    sched = torch.optim.lr_scheduler.OneCycleLR(opt, max_lr=lr, total_steps=steps, pct_start=0.05)
    ab = torch.tensor(schedule.alpha_bar)
    start, running = time.time(), 0.0
    for step in range(1, steps + 1):
        x0, cond, mask, tokens = make_batch(rng, batch, codec, tokenizer)
        t = torch.randint(0, schedule.num_train_steps, (batch,), generator=gen)
        eps = torch.randn(x0.shape, generator=gen)
        a = ab[t].sqrt().float().view(-1, 1, 1, 1, 1)
        s = (1 - ab[t]).sqrt().float().view(-1, 1, 1, 1, 1)
        pred = model(a * x0 + s * eps, t, cond, mask, tokens)
        loss = torch.mean((pred - eps) ** 2)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        opt.step()
        sched.step()
        running += loss.item()
        if step % log_every == 0:
            log.info("step %d loss %.4f (%.0fs)", step, running / log_every, time.time() - start)
            running = 0.0
    return model.eval()


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--out", default=str(BUNDLED_WEIGHTS))
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    model = pretrain(args.steps, args.seed, args.batch, args.lr)
    save_denoiser(model, args.out, {"pretrain": vars(args)})
    log.info("wrote %s", args.out)


if __name__ == "__main__":
    main()
