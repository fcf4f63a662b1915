"""
Edit request, inversion trajectory and edit result types
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from app.models.attention import ConstraintMode, MaskPlacement, ObjectMask
from app.models.diffusion import GuidanceConfig
from app.models.prompt import PromptPair


class GenerationStart(str, Enum):
    """Where the generation pass starts: the inverted latent or seeded Gaussian noise"""
    INVERSION = "inversion"
    NOISE = "noise"


@dataclass
class EditRequest:
    x_src: np.ndarray
    p_src: PromptPair
    p_edit: PromptPair
    mask: Optional[ObjectMask] = None
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    steps: int = 50
    mode: ConstraintMode = ConstraintMode.HARD
    # seeds the starting noise when start is NOISE
    seed: int = 0
    placement: MaskPlacement = MaskPlacement.POST_SOFTMAX
    renormalize: bool = False
    # copy the inverted background outside the mask at every step
    blend: bool = True
    run_unconditional: bool = True
    # fraction of generation steps, from the noisy end, that keep the attention constraint
    guidance_window: float = 1.0
    start: GenerationStart = GenerationStart.INVERSION


@dataclass
class InversionTrajectory:
    """Latents z_0 .. z_S indexed by grid position"""
    latents: List[np.ndarray]
    mode: ConstraintMode
    prompt_ids: Tuple[int, ...]
    mask_digest: str

    @property
    def steps(self) -> int:
        return len(self.latents) - 1

    def __getitem__(self, position: int) -> np.ndarray:
        return self.latents[position]


class StepDiagnostics(BaseModel):
    model_config = ConfigDict(frozen=True)

    phase: str
    step: int
    t: int
    inside_mass_outside: float = 0.0
    outside_mass_inside: float = 0.0
    blend_delta: float = 0.0


@dataclass
class EditResult:
    x_edit: np.ndarray
    trajectory: InversionTrajectory
    mask: ObjectMask
    diagnostics: List[StepDiagnostics] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    # attention-transform invocations during generation
    hook_calls: int = 0
