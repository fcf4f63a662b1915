"""
Run configuration loaded from JSON
"""
import json
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.core.errors import ConfigError
from app.models.attention import ConstraintMode, MaskPlacement
from app.models.denoiser import DenoiserConfig
from app.models.diffusion import GuidanceAnchor, GuidanceConfig, GuidanceSpace
from app.models.edit import GenerationStart


class ScheduleConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    T_train: int = Field(default=1000, ge=1)
    beta_start: float = 1e-4
    beta_end: float = 0.02


class EditConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    steps: int = Field(default=50, ge=1)
    w_g: float = Field(default=3.5, ge=0.0)
    mode: ConstraintMode = ConstraintMode.HARD
    reweight_scale: float = Field(default=1.0, gt=0.0)
    anchor: GuidanceAnchor = GuidanceAnchor.CONDITIONAL
    guidance_space: GuidanceSpace = GuidanceSpace.LATENT
    placement: MaskPlacement = MaskPlacement.POST_SOFTMAX
    renormalize: bool = False
    run_unconditional: bool = True
    guidance_window: float = Field(default=1.0, ge=0.0, le=1.0)
    start: GenerationStart = GenerationStart.INVERSION

    def guidance(self) -> GuidanceConfig:
        return GuidanceConfig(
            w_g=self.w_g,
            reweight_scale=self.reweight_scale,
            anchor=self.anchor,
            space=self.guidance_space,
        )


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=20, ge=1)
    batch_size: int = Field(default=16, ge=1)
    lr: float = Field(default=3e-4, gt=0.0)
    beta1: float = 0.9
    beta2: float = 0.999
    cfg_drop_rate: float = Field(default=0.1, ge=0.0, le=1.0)
    train_count: int = Field(default=2000, ge=1)


class BenchConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scene_count: int = Field(default=50, ge=1)
    oracle_tolerance: float = Field(default=40.0, gt=0.0)
    cleanup_votes: int = Field(default=7, ge=5, le=8)
    pck_threshold: float = Field(default=0.1, gt=0.0)
    antialias: bool = False
    # edit with the oracle-inferred mask instead of the ground truth
    inferred_shape: bool = False


class PathsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    data_dir: str = "data"
    checkpoint: str = "checkpoints/denoiser.sgdm"
    report: str = "reports/bench.json"


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    model: DenoiserConfig = Field(default_factory=DenoiserConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    edit: EditConfig = Field(default_factory=EditConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    @model_validator(mode="after")
    def check_timesteps(self):
        if self.model.T_train != self.schedule.T_train:
            raise ValueError("model.T_train must equal schedule.T_train")
        return self

    def echo(self) -> dict:
        return self.model_dump(mode="json")

    def with_section(self, section: str, update: Dict[str, Any]) -> "RunConfig":
        """Copy with command-line overrides applied to one section, validated like the file"""
        if not update:
            return self
        document = self.echo()
        document[section] = {**document[section], **update}
        try:
            return RunConfig.model_validate(document)
        except ValidationError as exc:
            raise ConfigError(f"Invalid {section} override: {exc}") from exc

    def check_matches_checkpoint(self, checkpoint: "RunConfig") -> None:
        """A replayed config may change edit and bench settings but not the trained model"""
        if self.model != checkpoint.model or self.schedule != checkpoint.schedule:
            raise ConfigError("config model/schedule sections do not match the checkpoint")

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        """Parse a run config, or the config echoed inside an edit result or benchmark report"""
        try:
            document = json.loads(text)
        except ValueError as exc:
            raise ConfigError(f"Invalid run config: {exc}") from exc
        if isinstance(document, dict) and isinstance(document.get("config"), dict):
            document = document["config"]
        try:
            return cls.model_validate(document)
        except ValidationError as exc:
            raise ConfigError(f"Invalid run config: {exc}") from exc

    @classmethod
    def load(cls, path: Optional[str]) -> "RunConfig":
        """Read a config file; a missing path means all defaults"""
        if path is None:
            return cls()
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"Cannot read config {path}: {exc}") from exc
        return cls.from_json(text)

    def dumps(self) -> str:
        return json.dumps(self.echo(), indent=2, sort_keys=True)
