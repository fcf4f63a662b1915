"""
Denoiser configuration and attention-site descriptors
"""
from enum import Enum
from typing import Tuple

from pydantic import BaseModel, ConfigDict, model_validator


class AttentionKind(str, Enum):
    CROSS = "cross"
    SELF = "self"


class AttentionSite(BaseModel):
    """One attention layer of the denoiser and the pixel grid it sees"""
    model_config = ConfigDict(frozen=True)

    layer_index: int
    kind: AttentionKind
    resolution: Tuple[int, int]

    @property
    def pixels(self) -> int:
        return self.resolution[0] * self.resolution[1]


class DenoiserConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    image_size: int = 16
    channels: int = 3
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 2
    token_budget: int = 8
    vocab_size: int = 32
    T_train: int = 1000
    mlp_ratio: int = 2
    # extra block at half resolution between the two halves of the stack
    pooled_middle: bool = False

    @model_validator(mode="after")
    def check_geometry(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        size = self.image_size
        if size < 1 or size & (size - 1):
            raise ValueError("image_size must be a power of two")
        if self.pooled_middle and size < 2:
            raise ValueError("pooled_middle needs image_size >= 2")
        if min(self.channels, self.n_layers, self.token_budget, self.T_train) < 1:
            raise ValueError("channels, n_layers, token_budget and T_train must be positive")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def token_count(self) -> int:
        return 1 + 2 * self.token_budget
