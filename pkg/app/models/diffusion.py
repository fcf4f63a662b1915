"""
Noise schedule, timestep grid and guidance settings
"""
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class GuidanceAnchor(str, Enum):
    """Which prediction the guidance extrapolation starts from"""
    CONDITIONAL = "conditional"
    UNCONDITIONAL = "unconditional"


class GuidanceSpace(str, Enum):
    """Combine predicted latents (default) or noise predictions"""
    LATENT = "latent"
    EPSILON = "epsilon"


class GuidanceConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    w_g: float = Field(default=3.5, ge=0.0)
    reweight_scale: float = Field(default=1.0, gt=0.0)
    anchor: GuidanceAnchor = GuidanceAnchor.CONDITIONAL
    space: GuidanceSpace = GuidanceSpace.LATENT


@dataclass(frozen=True)
class NoiseSchedule:
    """
    Linear beta schedule. ``alpha_bars`` has T_train + 1 entries with
    alpha_bars[0] == 1 so index t addresses timestep t directly.
    """
    T_train: int
    betas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[t])


@dataclass(frozen=True)
class TimestepGrid:
    """Strictly decreasing timesteps [t_S, ..., t_1]; position 0 stands for t = 0"""
    timesteps: Tuple[int, ...]

    @property
    def steps(self) -> int:
        return len(self.timesteps)

    def at(self, position: int) -> int:
        """Timestep at grid position k (0 <= k <= S)"""
        if position == 0:
            return 0
        return self.timesteps[self.steps - position]

    def ascending(self) -> List[Tuple[int, int, int]]:
        """(k, t_prev, t) for inversion, k running 1..S"""
        return [(k, self.at(k - 1), self.at(k)) for k in range(1, self.steps + 1)]

    def descending(self) -> Iterator[Tuple[int, int, int]]:
        """(k, t, t_prev) for generation, k running S..1"""
        for k in range(self.steps, 0, -1):
            yield k, self.at(k), self.at(k - 1)
