"""Experiment configuration (TOML) with ``section.key=value`` overrides.

Relative paths are resolved against the directory holding the config file.
See README for the full grammar.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backbone.schedule import ScheduleMode
from .conditioning import MaskKind
from .errors import ConfigError
from .lora import DEFAULT_TARGETS, LoraConfig
from .propagation import SampleSpec
from .synth import SquareScene
from .training import Stage, TrainPlan

DEFAULTS = {
    "seed": 0,
    "backbone": {"name": "toy", "weights": ""},
    "caption": {"text": "a scene"},
    "paths": {
        "data": "data",
        "video": "data/video",
        "region": "data/region",
        "edited_first": "data/edited_first",
        "preserve_mask": "work/preserve_mask",
        "adapter": "work/adapter.mlw",
        "trace": "work/trace.txt",
        "output": "work/output",
        "report": "work/report.txt",
    },
    "synth": {},
    "mask": {"kind": "selective"},
    "lora": {"rank": 16, "alpha": 16.0, "targets": list(DEFAULT_TARGETS)},
    "stage1": {"kind": "disentangle", "steps": 100, "learning_rate": 1e-4, "batch_size": 1},
    "stage2": {"enabled": False, "steps": 100, "learning_rate": 1e-4, "batch_size": 1},
    "appearance": [],
    "sample": {"num_steps": 30, "guidance_scale": 1.0, "schedule": "epsilon"},
    "eval": {"provider": "toy", "pool": 8},
}

_SECTIONS = set(DEFAULTS)


def _merge(base: dict, extra: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if where == "" and key not in _SECTIONS:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def parse_override(item: str) -> tuple[list[str], object]:
    """``a.b=value`` with ``value`` parsed as a TOML value (bare words as strings)."""
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {item!r} is not of the form key=value")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key.strip().split("."), value


@dataclass(frozen=True)
class AppearanceRef:
    frame: int
    pre: Path
    edited: Path
    region: Path


@dataclass
class ExperimentConfig:
    raw: dict
    root: Path
    source: Path | None = None
    overrides: list[str] = field(default_factory=list)

    # -- accessors ------------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def path(self, key: str) -> Path:
        value = self.raw["paths"].get(key)
        if not value:
            raise ConfigError(f"paths.{key} is not set")
        p = Path(value)
        return p if p.is_absolute() else self.root / p

    def resolve(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.root / p

    @property
    def caption(self) -> str:
        return str(self.raw["caption"]["text"])

    @property
    def backbone_weights(self) -> Path | None:
        w = self.raw["backbone"].get("weights")
        return self.resolve(w) if w else None

    @property
    def mask_kind(self) -> MaskKind:
        try:
            return MaskKind(self.raw["mask"]["kind"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def scene(self) -> SquareScene:
        s = dict(self.raw["synth"])
        s.pop("out", None)
        for key in ("start", "velocity", "color", "edit_color", "reference_color", "appearance_frames"):
            if key in s:
                s[key] = tuple(s[key])
        try:
            return SquareScene(**s)
        except TypeError as exc:
            raise ConfigError(f"bad [synth] section: {exc}") from exc

    def lora(self) -> LoraConfig:
        d = self.raw["lora"]
        return LoraConfig(int(d["rank"]), float(d["alpha"]), tuple(d["targets"]))

    def schedule_mode(self) -> ScheduleMode:
        try:
            return ScheduleMode(self.raw["sample"]["schedule"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def _plan(self, section: str, stage: Stage, seed: int) -> TrainPlan:
        d = self.raw[section]
        clip = None
        if "clip_len" in d:
            clip = (int(d["clip_len"]), int(d.get("overlap", 0)))
        return TrainPlan(
            stage=stage,
            steps=int(d["steps"]),
            learning_rate=float(d["learning_rate"]),
            seed=seed,
            clip_split=clip,
            lora=self.lora(),
            schedule_mode=self.schedule_mode(),
            batch_size=int(d.get("batch_size", 1)),
        )

    def plan1(self) -> TrainPlan:
        try:
            stage = Stage(self.raw["stage1"]["kind"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if stage is Stage.APPEARANCE:
            raise ConfigError("stage1.kind must be 'naive' or 'disentangle'")
        return self._plan("stage1", stage, self.seed)

    @property
    def stage2_enabled(self) -> bool:
        return bool(self.raw["stage2"].get("enabled", False))

    def plan2(self) -> TrainPlan | None:
        if not self.stage2_enabled:
            return None
        return self._plan("stage2", Stage.APPEARANCE, self.seed + 1)

    def appearance(self) -> list[AppearanceRef]:
        refs = []
        for i, entry in enumerate(self.raw["appearance"]):
            try:
                refs.append(
                    AppearanceRef(
                        int(entry["frame"]),
                        self.resolve(entry["pre"]),
                        self.resolve(entry["edited"]),
                        self.resolve(entry["region"]),
                    )
                )
            except KeyError as exc:
                raise ConfigError(f"appearance entry {i} lacks {exc}") from exc
        return refs

    def sample_spec(self) -> SampleSpec:
        d = self.raw["sample"]
        return SampleSpec(
            num_steps=int(d["num_steps"]),
            guidance_scale=float(d["guidance_scale"]),
            seed=self.seed,
            schedule_mode=self.schedule_mode(),
        )

    # -- validation -----------------------------------------------------------

    def require(self, *paths: Path) -> None:
        for p in paths:
            if not p.exists():
                raise ConfigError(f"required path does not exist: {p}")

    def validate_training(self) -> None:
        self.plan1()
        if self.raw["stage1"]["kind"] == "disentangle":
            self.require(self.path("video"), self.path("region"))
        else:
            self.require(self.path("video"))
        if self.stage2_enabled:
            refs = self.appearance()
            if not refs:
                raise ConfigError("stage 2 is enabled but no [[appearance]] pairs are configured")
            for ref in refs:
                self.require(ref.pre, ref.edited, ref.region)
            self.plan2()


def load_config(path=None, overrides: list[str] | None = None) -> ExperimentConfig:
    data = {}
    root = Path.cwd()
    source = None
    if path is not None:
        source = Path(path)
        try:
            data = tomllib.loads(source.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {source}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {source}: {exc}") from exc
        root = source.resolve().parent
    raw = _merge(DEFAULTS, data)
    for item in overrides or []:
        keys, value = parse_override(item)
        if keys[0] not in _SECTIONS:
            raise ConfigError(f"unknown config key {keys[0]!r}")
        node = raw
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override inside non-table {item!r}")
        node[keys[-1]] = value
    return ExperimentConfig(raw, root, source, list(overrides or []))
