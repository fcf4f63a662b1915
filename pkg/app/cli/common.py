"""
Shared loaders for the command-line handlers
"""
import argparse
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from app.core.config import settings
from app.core.errors import ConfigError, FormatError
from app.models.attention import ObjectMask
from app.models.diffusion import NoiseSchedule
from app.models.prompt import Vocabulary
from app.models.run_config import RunConfig
from app.services.denoiser_service import Denoiser
from app.services.diffusion_service import make_schedule
from app.services.edit_service import EditService
from app.services.scene_service import image_to_array
from app.storage.checkpoint import load_checkpoint, load_sidecar
from app.storage.manifest import MANIFEST_NAME
from app.storage.netpbm import read_mask, read_ppm


@dataclass
class LoadedModel:
    config: RunConfig
    vocab: Vocabulary
    model: Denoiser
    schedule: NoiseSchedule

    def editor(self) -> EditService:
        return EditService(self.model, self.schedule, self.vocab,
                           oracle_tolerance=self.config.bench.oracle_tolerance,
                           cleanup_votes=self.config.bench.cleanup_votes)


def schedule_for(config: RunConfig) -> NoiseSchedule:
    return make_schedule(config.schedule.T_train, config.schedule.beta_start, config.schedule.beta_end)


def check_vocabulary(config: RunConfig, vocab: Vocabulary) -> None:
    if vocab.size > config.model.vocab_size:
        raise ConfigError(f"vocabulary has {vocab.size} ids but model.vocab_size is {config.model.vocab_size}")


def load_model(ckpt: str, replay: Optional[RunConfig] = None) -> LoadedModel:
    """
    Rebuild the denoiser from a checkpoint and its JSON sidecar

    Args:
        ckpt: checkpoint path; its sidecar sits next to it
        replay: a run config (usually an echoed one) replacing the sidecar's;
            its model and schedule must match the checkpoint
    """
    config, vocab = load_sidecar(ckpt)
    if replay is not None:
        replay.check_matches_checkpoint(config)
        config = replay
    check_vocabulary(config, vocab)
    model = Denoiser(config.model, seed=config.seed)
    model.load_state(load_checkpoint(ckpt))
    model.requires_grad_(False)
    return LoadedModel(config=config, vocab=vocab, model=model, schedule=schedule_for(config))


def replay_config(args: argparse.Namespace) -> Optional[RunConfig]:
    path = getattr(args, "config", None)
    return RunConfig.load(path) if path else None


def resolve_model(args: argparse.Namespace) -> LoadedModel:
    """Load --ckpt (default paths.checkpoint of --config) with --config replayed over the sidecar"""
    replay = replay_config(args)
    ckpt = args.ckpt or (replay or RunConfig()).paths.checkpoint
    return load_model(ckpt, replay)


def manifest_path(config: RunConfig) -> str:
    return str(Path(config.paths.data_dir) / MANIFEST_NAME)


def load_image(path: str) -> np.ndarray:
    return image_to_array(read_ppm(path))


def load_mask(path: Optional[str]) -> Optional[ObjectMask]:
    return read_mask(path) if path else None


def write_json(path: Path, document: Dict[str, Any]) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(document, indent=2, sort_keys=True), encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc


def worker_count() -> int:
    return settings.worker_count()
