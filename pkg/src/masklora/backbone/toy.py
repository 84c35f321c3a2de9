"""The bundled desk-scale backbone: patchify codec + toy denoiser + toy tokenizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import torch

from ..errors import BackboneError
from ..weightfile import read_weights, write_weights
from .codec import PatchifyCodec
from .denoiser import DenoiserConfig, ToyDenoiser
from .schedule import NoiseSchedule, ScheduleMode
from .text import P_STAR, PromptTokens, ToyTokenizer, compose_prompt

BUNDLED_WEIGHTS = Path(__file__).parent / "weights" / "toy_denoiser.mlw"


@dataclass
class ToyBackbone:
    """Everything the method needs from an I2V model.

    A real-model adapter exposes the same attributes: ``denoiser`` (an
    ``nn.Module`` with ``predict(x_t, t, bundle)`` and dotted layer paths),
    ``codec`` (``encode``/``decode``/``spec``), ``tokenizer``, ``p_star`` and
    ``schedule``.
    """

    denoiser: ToyDenoiser
    codec: PatchifyCodec = field(default_factory=PatchifyCodec)
    tokenizer: ToyTokenizer = field(default_factory=ToyTokenizer)
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule.linear)
    p_star: int = P_STAR
    name: str = "toy"

    def prompt(self, caption: str) -> PromptTokens:
        return compose_prompt(self.p_star, caption, self.tokenizer)

    def schedule_for(self, mode) -> NoiseSchedule:
        if ScheduleMode(mode) is self.schedule.mode:
            return self.schedule
        return NoiseSchedule.for_mode(mode, self.schedule.num_train_steps)

    def layer_paths(self) -> list[str]:
        return [n for n, m in self.denoiser.named_modules() if isinstance(m, torch.nn.Linear)]


def save_denoiser(model: ToyDenoiser, path, meta: dict | None = None) -> None:
    """Persist full denoiser weights in the ``full`` weight-file variant."""
    tensors = {k: v for k, v in model.state_dict().items()}
    write_weights(path, "full", tensors, {"denoiser_config": model.cfg.to_dict(), **(meta or {})})


def load_denoiser(path, dtype: torch.dtype = torch.float32) -> ToyDenoiser:
    kind, meta, tensors = read_weights(path)
    if kind != "full":
        raise BackboneError(f"{path} holds {kind!r} weights, not full denoiser weights")
    model = ToyDenoiser(DenoiserConfig(**meta["denoiser_config"]))
    model.load_state_dict(tensors)
    return model.to(dtype).eval()


def load_toy_backbone(
    weights=None, dtype: torch.dtype = torch.float32, schedule_mode=ScheduleMode.EPSILON
) -> ToyBackbone:
    """The pretrained toy backbone; ``weights=None`` uses the bundled file."""
    path = Path(weights) if weights is not None else BUNDLED_WEIGHTS
    if not path.exists():
        raise BackboneError(
            f"toy weights not found at {path}; run `python -m masklora.backbone.pretrain`"
        )
    model = load_denoiser(path, dtype)
    for p in model.parameters():
        p.requires_grad_(False)
    return ToyBackbone(model, schedule=NoiseSchedule.for_mode(schedule_mode, model.cfg.num_train_steps))


def random_backbone(seed: int = 0, dtype: torch.dtype = torch.float32, cfg: DenoiserConfig | None = None) -> ToyBackbone:
    """Untrained toy backbone, for tests that only need the architecture."""
    torch.manual_seed(seed)
    model = ToyDenoiser(cfg).to(dtype).eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return ToyBackbone(model)
