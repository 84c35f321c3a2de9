"""Low-rank adapters on attention projections.

Each targeted ``nn.Linear`` is wrapped so that it computes
``W x + b + (alpha / r) * B (A x)`` with ``W, b`` frozen and only ``A, B``
trainable. ``B`` starts at zero, so a fresh adapter leaves the model
unchanged.
"""

from __future__ import annotations

import fnmatch
import hashlib
import math
from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from .errors import LoraError
from .weightfile import read_weights, write_weights

DEFAULT_TARGETS = ("blocks.*.self_attn.*", "blocks.*.cross_attn.*")


@dataclass(frozen=True)
class LoraConfig:
    rank: int = 16
    alpha: float = 16.0
    target_patterns: tuple[str, ...] = DEFAULT_TARGETS

    def __post_init__(self):
        object.__setattr__(self, "target_patterns", tuple(self.target_patterns))
        if int(self.rank) < 1:
            raise LoraError("rank must be >= 1")
        if not self.alpha > 0:
            raise LoraError("alpha must be > 0")
        if not self.target_patterns:
            raise LoraError("at least one target pattern is required")

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target_patterns"] = list(self.target_patterns)
        return d


class LoraLinear(nn.Module):
    def __init__(self, base: nn.Linear, rank: int, scaling: float):
        super().__init__()
        self.base = base
        self.scaling = scaling
        w = base.weight
        self.lora_A = nn.Parameter(torch.zeros(rank, base.in_features, dtype=w.dtype))
        self.lora_B = nn.Parameter(torch.zeros(base.out_features, rank, dtype=w.dtype))
        self.merged = False
        self._backup: tuple[torch.Tensor, ...] | None = None

    @property
    def in_features(self):
        return self.base.in_features

    @property
    def out_features(self):
        return self.base.out_features

    def delta(self) -> torch.Tensor:
        return self.scaling * (self.lora_B @ self.lora_A)

    def forward(self, x):
        out = self.base(x)
        if self.merged:
            return out
        return out + self.scaling * ((x @ self.lora_A.t()) @ self.lora_B.t())


def fingerprint(layer: nn.Linear) -> str:
    """SHA-256 of a linear layer's weight and bias (as float32 bytes)."""
    h = hashlib.sha256()
    for p in (layer.weight, layer.bias):
        if p is not None:
            h.update(p.detach().to(torch.float32).cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


@dataclass
class LoraAdapter:
    """Per-layer low-rank factors plus provenance.

    ``weights`` maps a layer path to its ``(A, B)`` pair. When the adapter is
    attached to a model these are the live trainable parameters.
    """

    config: LoraConfig
    weights: dict[str, tuple[torch.Tensor, torch.Tensor]]
    fingerprints: dict[str, str]
    meta: dict = field(default_factory=dict)

    @property
    def scaling(self) -> float:
        return self.config.scaling

    @property
    def layer_paths(self) -> list[str]:
        return sorted(self.weights)

    def parameters(self) -> list[torch.Tensor]:
        return [t for path in self.layer_paths for t in self.weights[path]]

    def num_parameters(self) -> int:
        return sum(t.numel() for t in self.parameters())

    def tensors(self) -> dict[str, torch.Tensor]:
        out = {}
        for path, (a, b) in self.weights.items():
            out[f"{path}.lora_A"] = a
            out[f"{path}.lora_B"] = b
        return out

    def state_fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, t in sorted(self.tensors().items()):
            h.update(name.encode())
            h.update(t.detach().to(torch.float64).cpu().contiguous().numpy().tobytes())
        return h.hexdigest()[:16]

    def is_untrained(self) -> bool:
        return all(not torch.any(b != 0) for _, b in self.weights.values())

    def snapshot(self) -> "LoraAdapter":
        """Detached copy, unaffected by further training."""
        return LoraAdapter(
            self.config,
            {p: (a.detach().clone(), b.detach().clone()) for p, (a, b) in self.weights.items()},
            dict(self.fingerprints),
            dict(self.meta),
        )


def _resolve(model: nn.Module, path: str) -> tuple[nn.Module, str]:
    parent_path, _, attr = path.rpartition(".")
    return (model.get_submodule(parent_path) if parent_path else model), attr


def find_targets(model: nn.Module, patterns) -> list[str]:
    return [
        name
        for name, mod in model.named_modules()
        if isinstance(mod, nn.Linear) and any(fnmatch.fnmatchcase(name, p) for p in patterns)
    ]


def lora_layers(model: nn.Module) -> dict[str, LoraLinear]:
    return {n: m for n, m in model.named_modules() if isinstance(m, LoraLinear)}


def inject(
    model: nn.Module, cfg: LoraConfig | None = None, generator: torch.Generator | None = None
) -> LoraAdapter:
    """Wrap matched linears in ``model`` (in place) and freeze everything else.

    ``A`` is drawn from ``U(-1/sqrt(d_in), 1/sqrt(d_in))``; ``B`` is zero.
    """
    cfg = cfg or LoraConfig()
    if lora_layers(model):
        raise LoraError("model already carries LoRA layers")
    paths = find_targets(model, cfg.target_patterns)
    if not paths:
        raise LoraError(f"target patterns {list(cfg.target_patterns)} match no layers")
    for path in paths:
        lin = model.get_submodule(path)
        if cfg.rank > min(lin.in_features, lin.out_features):
            raise LoraError(
                f"rank {cfg.rank} too large for {path} ({lin.in_features} -> {lin.out_features})"
            )
    for p in model.parameters():
        p.requires_grad_(False)

    weights, prints = {}, {}
    for path in paths:
        parent, attr = _resolve(model, path)
        base = getattr(parent, attr)
        wrapped = LoraLinear(base, cfg.rank, cfg.scaling)
        bound = 1.0 / math.sqrt(base.in_features)
        a = torch.rand(wrapped.lora_A.shape, generator=generator, dtype=torch.float64)
        with torch.no_grad():
            wrapped.lora_A.copy_((2.0 * a - 1.0) * bound)
        setattr(parent, attr, wrapped)
        weights[path] = (wrapped.lora_A, wrapped.lora_B)
        prints[path] = fingerprint(base)
    return LoraAdapter(cfg, weights, prints)


def attach(model: nn.Module, adapter: LoraAdapter) -> LoraAdapter:
    """Inject ``adapter``'s layers into ``model`` and load its factors.

    Returns the live adapter bound to the model's new parameters.
    """
    live = inject(model, adapter.config)
    missing = set(adapter.weights) ^ set(live.weights)
    if missing:
        detach(model)
        raise LoraError(f"adapter layers do not match model: {sorted(missing)}")
    for path, print_ in adapter.fingerprints.items():
        if live.fingerprints[path] != print_:
            detach(model)
            raise LoraError(f"base weights of {path} differ from those the adapter was trained on")
    with torch.no_grad():
        for path, (a, b) in adapter.weights.items():
            la, lb = live.weights[path]
            la.copy_(a)
            lb.copy_(b)
    live.meta = dict(adapter.meta)
    return live


def detach(model: nn.Module) -> None:
    """Remove all LoRA wrappers, restoring the plain base layers."""
    for path, layer in lora_layers(model).items():
        if layer.merged:
            _unmerge_layer(layer)
        parent, attr = _resolve(model, path)
        setattr(parent, attr, layer.base)


def _check_prints(model: nn.Module, adapter: LoraAdapter) -> dict[str, LoraLinear]:
    layers = lora_layers(model)
    for path in adapter.weights:
        if path not in layers:
            raise LoraError(f"model has no LoRA layer at {path}")
    return layers


def merge(model: nn.Module, adapter: LoraAdapter) -> nn.Module:
    """Fold ``scaling * B A`` into the base weights of each adapted layer."""
    layers = _check_prints(model, adapter)
    for path in adapter.weights:
        layer = layers[path]
        if layer.merged:
            continue
        if fingerprint(layer.base) != adapter.fingerprints[path]:
            raise LoraError(f"fingerprint mismatch at {path}: adapter trained against a different base")
    with torch.no_grad():
        for path, (a, b) in adapter.weights.items():
            layer = layers[path]
            if layer.merged:
                continue
            layer._backup = (layer.base.weight.detach().clone(),)
            delta = adapter.scaling * (b.to(torch.float64) @ a.to(torch.float64))
            layer.base.weight.add_(delta.to(layer.base.weight.dtype))
            layer.merged = True
    return model


def _unmerge_layer(layer: LoraLinear) -> None:
    with torch.no_grad():
        layer.base.weight.copy_(layer._backup[0])
    layer._backup = None
    layer.merged = False


def unmerge(model: nn.Module, adapter: LoraAdapter) -> nn.Module:
    """Restore the exact pre-merge base weights."""
    layers = _check_prints(model, adapter)
    for path in adapter.weights:
        if layers[path].merged:
            _unmerge_layer(layers[path])
    return model


def save_adapter(adapter: LoraAdapter, path) -> None:
    meta = {
        "config": adapter.config.to_dict(),
        "fingerprints": adapter.fingerprints,
        "meta": adapter.meta,
    }
    write_weights(path, "lora", adapter.tensors(), meta)


def load_adapter(path) -> LoraAdapter:
    kind, meta, tensors = read_weights(path)
    if kind != "lora":
        raise LoraError(f"{path} holds {kind!r} weights, not a LoRA adapter")
    cfg_d = meta["config"]
    cfg = LoraConfig(cfg_d["rank"], cfg_d["alpha"], tuple(cfg_d["target_patterns"]))
    weights = {}
    for name, t in tensors.items():
        layer_path, _, which = name.rpartition(".")
        pair = weights.setdefault(layer_path, [None, None])
        pair[0 if which == "lora_A" else 1] = t
    return LoraAdapter(
        cfg, {p: (a, b) for p, (a, b) in weights.items()}, meta["fingerprints"], meta.get("meta", {})
    )
