"""Noise schedules: epsilon-prediction (DDPM alpha-bar) and rectified flow."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import torch

from ..errors import BackboneError


class ScheduleMode(str, enum.Enum):
    EPSILON = "epsilon"
    RECTIFIED_FLOW = "rectified_flow"


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Forward-noising rule and its timestep grid.

    Epsilon mode uses steps ``0 .. N-1`` with ``x_t = sqrt(a_t) x0 + sqrt(1-a_t) eps``;
    index ``-1`` denotes the clean endpoint (``a = 1``).
    Rectified-flow mode uses steps ``0 .. N`` with ``sigma_t = t / N`` and
    ``x_t = (1 - sigma_t) x0 + sigma_t eps``; ``t = 0`` is clean.
    """

    mode: ScheduleMode = ScheduleMode.EPSILON
    num_train_steps: int = 1000
    alpha_bar: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        mode = ScheduleMode(self.mode)
        object.__setattr__(self, "mode", mode)
        if self.num_train_steps < 1:
            raise BackboneError("num_train_steps must be >= 1")
        if mode is ScheduleMode.EPSILON:
            if self.alpha_bar is None:
                raise BackboneError("epsilon schedule needs alpha_bar; use NoiseSchedule.linear")
            ab = np.asarray(self.alpha_bar, dtype=np.float64)
            if ab.shape != (self.num_train_steps,):
                raise BackboneError("alpha_bar length must equal num_train_steps")
            if np.any(np.diff(ab) >= 0) or ab.max() > 1 or ab.min() < 0:
                raise BackboneError("alpha_bar must be strictly decreasing within [0, 1]")
            ab.setflags(write=False)
            object.__setattr__(self, "alpha_bar", ab)

    @classmethod
    def linear(cls, num_train_steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02):
        betas = np.linspace(beta_start, beta_end, num_train_steps, dtype=np.float64)
        return cls(ScheduleMode.EPSILON, num_train_steps, np.cumprod(1.0 - betas))

    @classmethod
    def rectified_flow(cls, num_train_steps: int = 1000):
        return cls(ScheduleMode.RECTIFIED_FLOW, num_train_steps)

    @classmethod
    def for_mode(cls, mode, num_train_steps: int = 1000):
        if ScheduleMode(mode) is ScheduleMode.EPSILON:
            return cls.linear(num_train_steps)
        return cls.rectified_flow(num_train_steps)

    # -- timestep grid -------------------------------------------------------

    @property
    def t_min(self) -> int:
        return 0 if self.mode is ScheduleMode.EPSILON else 1

    @property
    def t_max(self) -> int:
        n = self.num_train_steps
        return n - 1 if self.mode is ScheduleMode.EPSILON else n

    @property
    def t_clean(self) -> int:
        return -1 if self.mode is ScheduleMode.EPSILON else 0

    def check_t(self, t: int, allow_clean: bool = False) -> int:
        t = int(t)
        lo = self.t_clean if allow_clean else self.t_min
        if not lo <= t <= self.t_max:
            raise BackboneError(f"timestep {t} outside [{lo}, {self.t_max}]")
        return t

    def signal_noise(self, t: int) -> tuple[float, float]:
        """Coefficients ``(a, b)`` with ``x_t = a * x0 + b * eps``."""
        t = self.check_t(t, allow_clean=True)
        if self.mode is ScheduleMode.EPSILON:
            ab = 1.0 if t < 0 else float(self.alpha_bar[t])
            return float(np.sqrt(ab)), float(np.sqrt(1.0 - ab))
        sigma = t / self.num_train_steps
        return 1.0 - sigma, sigma

    def sigma(self, t: int) -> float:
        return self.signal_noise(t)[1]

    def add_noise(self, x0: torch.Tensor, eps: torch.Tensor, t: int) -> torch.Tensor:
        if x0.shape != eps.shape:
            raise BackboneError(f"x0 {tuple(x0.shape)} and eps {tuple(eps.shape)} differ in shape")
        self.check_t(t)
        a, b = self.signal_noise(t)
        return a * x0 + b * eps

    def target(self, x0: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
        """Regression target of the denoiser: noise, or velocity ``eps - x0``."""
        if self.mode is ScheduleMode.EPSILON:
            return eps
        return eps - x0

    def sampling_timesteps(self, num_steps: int) -> list[int]:
        """Decreasing grid from ``t_max`` ending at the clean index, ``num_steps`` intervals."""
        if num_steps < 1:
            raise BackboneError("num_steps must be >= 1")
        grid = np.linspace(self.t_max, self.t_clean, num_steps + 1)
        steps = [int(round(v)) for v in grid]
        for a, b in zip(steps, steps[1:]):
            if b >= a:
                raise BackboneError(f"{num_steps} steps do not fit into {self.num_train_steps} train steps")
        return steps


def add_noise(schedule: NoiseSchedule, x0: torch.Tensor, eps: torch.Tensor, t: int) -> torch.Tensor:
    return schedule.add_noise(x0, eps, t)
