"""
Object masks, mask pyramids and attention-constraint settings
"""
import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.core.errors import GeometryError
from app.models.denoiser import AttentionSite


class ConstraintMode(str, Enum):
    NONE = "none"
    TOKEN_ONLY = "token_only"
    SOFT = "soft"
    HARD = "hard"


class MaskPlacement(str, Enum):
    POST_SOFTMAX = "post_softmax"
    # masking logits with -inf; realized as post-softmax masking plus row renormalization
    PRE_SOFTMAX = "pre_softmax"


class ReweightConfig(BaseModel):
    """Constant upweighting of the token columns that changed between source and edit prompts"""
    model_config = ConfigDict(frozen=True)

    scale: float = Field(default=1.0, gt=0.0)
    target: Tuple[int, ...] = ()

    @property
    def is_identity(self) -> bool:
        return self.scale == 1.0 or not self.target


@dataclass(frozen=True)
class ObjectMask:
    """Binary H x W mask, 1 = inside the object"""
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 2:
            raise GeometryError(f"mask must be 2-D, got shape {arr.shape}")
        if not np.isin(arr, (0, 1)).all():
            raise GeometryError("mask values must be 0 or 1")
        object.__setattr__(self, "values", arr.astype(np.uint8))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def area(self) -> int:
        return int(self.values.sum())

    @property
    def area_fraction(self) -> float:
        return self.area / self.values.size

    @property
    def is_editable(self) -> bool:
        return 0 < self.area < self.values.size

    def as_bool(self) -> np.ndarray:
        return self.values.astype(bool)

    def digest(self) -> str:
        return hashlib.sha1(self.values.tobytes() + repr(self.shape).encode()).hexdigest()

    @classmethod
    def full(cls, height: int, width: int, value: int = 1) -> "ObjectMask":
        return cls(np.full((height, width), value, dtype=np.uint8))


@dataclass(frozen=True)
class MaskLevel:
    """Flattened hard ({0,1}) and soft ([0,1]) mask at one attention resolution"""
    resolution: Tuple[int, int]
    hard: np.ndarray
    soft: np.ndarray


@dataclass(frozen=True)
class MaskPyramid:
    source_shape: Tuple[int, int]
    levels: Dict[Tuple[int, int], MaskLevel] = field(default_factory=dict)

    def entry(self, site: AttentionSite) -> MaskLevel:
        level = self.levels.get(tuple(site.resolution))
        if level is None:
            raise GeometryError(f"no mask level for site {site.kind.value}@{site.resolution}")
        return level
