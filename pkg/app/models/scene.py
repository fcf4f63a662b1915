"""
Synthetic scene description types
"""
from dataclasses import dataclass
from enum import Enum
from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.models.attention import ObjectMask
from app.models.prompt import PromptPair


class ShapeClass(str, Enum):
    CIRCLE = "circle"
    SQUARE = "square"
    TRIANGLE = "triangle"
    STAR = "star"


class BackgroundKind(str, Enum):
    SOLID = "solid"
    GRADIENT = "gradient"
    CHECKER = "checker"


class SceneSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    shape: ShapeClass
    color: str
    striped: bool = False
    background: BackgroundKind = BackgroundKind.SOLID
    center_x: float
    center_y: float
    radius: float = Field(gt=0)
    image_size: int = 16
    seed: int = 0
    antialias: bool = False


class Keypoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    x: float
    y: float


@dataclass
class Scene:
    spec: SceneSpec
    image: np.ndarray
    mask: ObjectMask
    keypoints: List[Keypoint]
    p_src: PromptPair

    @property
    def label(self) -> ShapeClass:
        return self.spec.shape
