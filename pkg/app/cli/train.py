"""
train: fit the denoiser on a generated dataset and save a checkpoint
"""
import argparse

import structlog

from app.cli.common import check_vocabulary, manifest_path, schedule_for
from app.core.config import settings
from app.core.errors import TrainingError
from app.core.logging import progress_enabled
from app.models.prompt import PromptPair
from app.models.run_config import RunConfig
from app.services.denoiser_service import Denoiser
from app.services.scene_service import image_to_array
from app.services.tokenizer_service import default_vocabulary, tokenize
from app.services.training_service import TrainingExample, TrainingService
from app.storage.checkpoint import save_checkpoint, save_sidecar
from app.storage.manifest import read_manifest, resolve
from app.storage.netpbm import read_ppm

logger = structlog.get_logger()


def train(args: argparse.Namespace) -> int:
    config = RunConfig.load(args.config)
    if args.epochs is not None:
        config = config.with_section("train", {"epochs": args.epochs})
    out_ckpt = args.out_ckpt or config.paths.checkpoint
    vocab = default_vocabulary()
    check_vocabulary(config, vocab)

    manifest = args.data or manifest_path(config)
    entries = read_manifest(manifest)[:config.train.train_count]
    dataset = [
        TrainingExample(
            image=image_to_array(read_ppm(resolve(manifest, entry.image_path))),
            tokens=tokenize(PromptPair.parse(entry.p_src), vocab, config.model.token_budget),
        )
        for entry in entries
    ]
    if not dataset:
        raise TrainingError("no training examples")

    model = Denoiser(config.model, seed=config.seed)
    trainer = TrainingService(model, schedule_for(config), config.train, seed=config.seed,
                              progress=progress_enabled(settings))
    stats = trainer.train(dataset)
    save_checkpoint(out_ckpt, model.state())
    save_sidecar(out_ckpt, config, vocab)
    logger.info("Checkpoint saved", path=out_ckpt, final_loss=stats.final_loss)
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="train the denoiser")
    parser.add_argument("--config", help="run config JSON (defaults when omitted)")
    parser.add_argument("--data", help="dataset manifest JSONL (default <paths.data_dir>/manifest.jsonl)")
    parser.add_argument("--out-ckpt", help="defaults to paths.checkpoint")
    parser.add_argument("--epochs", type=int, help="override train.epochs")
    parser.set_defaults(handler=train)
