"""Toy tokenizer, prompt composition, and caption providers."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Protocol

from ..errors import CaptionError
from ..media import VideoTensor

VOCAB_SIZE = 1024
#: Reserved id of the special token prepended to every caption.
P_STAR = 0
PAD = 1
_FIRST_WORD_ID = 2


class ToyTokenizer:
    """Whitespace word hashing into a fixed vocabulary (ids 0 and 1 reserved)."""

    vocab_size = VOCAB_SIZE

    def __call__(self, text: str) -> list[int]:
        span = self.vocab_size - _FIRST_WORD_ID
        return [
            _FIRST_WORD_ID + zlib.crc32(word.encode("utf-8")) % span
            for word in text.lower().split()
        ]


@dataclass(frozen=True)
class PromptTokens:
    ids: tuple[int, ...]
    special: int = P_STAR

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        if not self.ids or self.ids[0] != self.special:
            raise ValueError("prompt tokens must start with the special token")

    def __len__(self):
        return len(self.ids)


def compose_prompt(p_star: int, caption: str, tokenizer) -> PromptTokens:
    """``[p*] + tokenize(caption)``."""
    return PromptTokens((p_star, *tokenizer(caption)), special=p_star)


class CaptionProvider(Protocol):
    name: str

    def __call__(self, frame: VideoTensor) -> str: ...


class StubCaptioner:
    """Returns a fixed caption; stands in for an image captioning model."""

    def __init__(self, text: str = "a scene", name: str = "stub"):
        self.text = text
        self.name = name

    def __call__(self, frame: VideoTensor) -> str:
        return self.text


def caption(provider: CaptionProvider, frame: VideoTensor) -> str:
    if frame.num_frames != 1:
        raise ValueError(f"caption expects a single frame, got {frame.num_frames}")
    name = getattr(provider, "name", type(provider).__name__)
    try:
        text = provider(frame)
    except Exception as exc:
        raise CaptionError(name, exc) from exc
    if not isinstance(text, str) or not text.strip():
        raise CaptionError(name, "empty caption")
    return text
