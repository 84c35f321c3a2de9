"""A small latent-video transformer used as the bundled toy I2V denoiser.

Conditioning enters by channel-concatenating the masked latent video and the
latent mask onto the noisy latent before the input projection; the prompt
is attended to through cross-attention. Attention projections live at
stable paths ``blocks.{i}.{self_attn,cross_attn}.{q,k,v,out}``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import BackboneError
from .schedule import NoiseSchedule
from .text import VOCAB_SIZE


@dataclass(frozen=True)
class DenoiserConfig:
    latent_channels: int = 12
    width: int = 128
    heads: int = 4
    depth: int = 2
    text_dim: int = 64
    mlp_ratio: int = 4
    vocab_size: int = VOCAB_SIZE
    num_train_steps: int = 1000
    # "v": the network regresses a*eps - b*x0 and the output is converted to
    # eps = a*v + b*x_t, which keeps x0 estimates sane at high noise.
    prediction: str = "v"

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoid(pos: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """``len(pos) x dim`` sin/cos features of (possibly fractional) positions."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float64) / half
    )
    ang = pos.to(torch.float64)[:, None] * freqs[None]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


def position_features(t: int, h: int, w: int, width: int) -> torch.Tensor:
    """Fixed 3-axis sinusoidal embedding, ``(t*h*w) x width``, frame-major order."""
    dt = 2 * (width // 6) + 2 * ((width - 6 * (width // 6)) // 2)
    dh = 2 * (width // 6)
    dw = width - dt - dh
    ft = sinusoid(torch.arange(t), dt)
    fh = sinusoid(torch.arange(h), dh)
    fw = sinusoid(torch.arange(w), dw)
    grid = torch.cat(
        [
            ft[:, None, None].expand(t, h, w, dt),
            fh[None, :, None].expand(t, h, w, dh),
            fw[None, None, :].expand(t, h, w, dw),
        ],
        dim=-1,
    )
    return grid.reshape(t * h * w, width)


class Attention(nn.Module):
    def __init__(self, width: int, context_dim: int, heads: int):
        super().__init__()
        if width % heads:
            raise BackboneError("width must be divisible by heads")
        self.heads = heads
        self.q = nn.Linear(width, width)
        self.k = nn.Linear(context_dim, width)
        self.v = nn.Linear(context_dim, width)
        self.out = nn.Linear(width, width)

    def forward(self, x: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        hd = d // self.heads

        def split(z):
            return z.view(b, -1, self.heads, hd).transpose(1, 2)

        q, k, v = split(self.q(x)), split(self.k(context)), split(self.v(context))
        y = F.scaled_dot_product_attention(q, k, v)
        return self.out(y.transpose(1, 2).reshape(b, n, d))


class Block(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        w = cfg.width
        self.norm1 = nn.LayerNorm(w)
        self.self_attn = Attention(w, w, cfg.heads)
        self.norm2 = nn.LayerNorm(w)
        self.cross_attn = Attention(w, cfg.text_dim, cfg.heads)
        self.norm3 = nn.LayerNorm(w)
        self.mlp = nn.Sequential(
            nn.Linear(w, w * cfg.mlp_ratio), nn.GELU(), nn.Linear(w * cfg.mlp_ratio, w)
        )

    def forward(self, x, text):
        h = self.norm1(x)
        x = x + self.self_attn(h, h)
        x = x + self.cross_attn(self.norm2(x), text)
        return x + self.mlp(self.norm3(x))


class ToyDenoiser(nn.Module):
    """Predicts the schedule's regression target for a noisy latent video."""

    def __init__(self, cfg: DenoiserConfig | None = None):
        super().__init__()
        cfg = cfg or DenoiserConfig()
        self.cfg = cfg
        c, w = cfg.latent_channels, cfg.width
        self.in_proj = nn.Linear(2 * c + 1, w)
        self.time_mlp = nn.Sequential(nn.Linear(w, w), nn.SiLU(), nn.Linear(w, w))
        self.token_embed = nn.Embedding(cfg.vocab_size, cfg.text_dim)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.depth))
        self.norm_out = nn.LayerNorm(w)
        self.out_proj = nn.Linear(w, c)
        if cfg.prediction not in ("v", "epsilon"):
            raise BackboneError(f"unknown prediction {cfg.prediction!r}")
        ab = NoiseSchedule.linear(cfg.num_train_steps).alpha_bar
        self.register_buffer("alpha_bar", torch.tensor(ab, dtype=torch.float64), persistent=False)

    @property
    def dtype(self) -> torch.dtype:
        return self.out_proj.weight.dtype

    def attention_layer_paths(self) -> list[str]:
        return [
            name
            for name, mod in self.named_modules()
            if isinstance(mod, nn.Linear) and (".self_attn." in name or ".cross_attn." in name)
        ]

    def forward(
        self,
        x: torch.Tensor,
        t: torch.Tensor | int | float,
        cond_latent: torch.Tensor,
        mask: torch.Tensor,
        tokens: torch.Tensor,
    ) -> torch.Tensor:
        """Batched forward.

        x, cond_latent: ``B x C x T x h x w``; mask: ``B x 1 x T x h x w``;
        tokens: ``B x L`` int ids; t: train-step index (scalar or ``B``).
        """
        if x.ndim != 5 or x.shape[1] != self.cfg.latent_channels:
            raise BackboneError(f"expected B x {self.cfg.latent_channels} x T x h x w, got {tuple(x.shape)}")
        if cond_latent.shape != x.shape or mask.shape != (x.shape[0], 1, *x.shape[2:]):
            raise BackboneError(
                f"condition shapes {tuple(cond_latent.shape)}, {tuple(mask.shape)} "
                f"do not match latent {tuple(x.shape)}"
            )
        b, c, nt, h, w = x.shape
        dtype = self.dtype
        t = torch.as_tensor(t, dtype=torch.float64).reshape(-1).expand(b)
        if torch.any(t < 0) or torch.any(t > self.cfg.num_train_steps):
            raise BackboneError(f"unknown timestep {t.tolist()}")

        z = torch.cat([x.to(dtype), cond_latent.to(dtype), mask.to(dtype)], dim=1)
        tokens_in = z.flatten(2).transpose(1, 2)  # B x N x (2C+1)
        hidden = self.in_proj(tokens_in)
        hidden = hidden + position_features(nt, h, w, self.cfg.width).to(dtype)
        temb = sinusoid(t * (1000.0 / self.cfg.num_train_steps), self.cfg.width).to(dtype)
        hidden = hidden + self.time_mlp(temb)[:, None]

        text = self.token_embed(tokens.long())
        for block in self.blocks:
            hidden = block(hidden, text)
        out = self.out_proj(self.norm_out(hidden)).transpose(1, 2).reshape(b, c, nt, h, w)
        if self.cfg.prediction == "v":
            idx = t.round().long().clamp(0, self.cfg.num_train_steps - 1)
            ab = self.alpha_bar[idx]
            a = ab.sqrt().to(dtype).view(-1, 1, 1, 1, 1)
            s = (1 - ab).sqrt().to(dtype).view(-1, 1, 1, 1, 1)
            out = a * out + s * x.to(dtype)
        return out

    def predict(self, x_t: torch.Tensor, t: int, cond) -> torch.Tensor:
        """Unbatched forward on a :class:`ConditioningBundle`."""
        if tuple(x_t.shape) != tuple(cond.cond_latent.shape):
            raise BackboneError(
                f"latent {tuple(x_t.shape)} does not match condition {tuple(cond.cond_latent.shape)}"
            )
        tokens = torch.tensor([cond.prompt_tokens.ids])
        out = self(
            x_t[None], t, cond.cond_latent[None], cond.mask_tensor[None], tokens
        )
        return out[0]


def predict(denoiser, x_t: torch.Tensor, t: int, cond) -> torch.Tensor:
    return denoiser.predict(x_t, t, cond)
