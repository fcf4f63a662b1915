"""
gen-data: write synthetic scenes, masks and a manifest
"""
import argparse
from pathlib import Path

import structlog

from app.cli.common import write_json
from app.core.errors import UsageError
from app.models.run_config import RunConfig
from app.services.scene_service import build_edit_suite
from app.storage.manifest import MANIFEST_NAME, ManifestEntry, write_manifest
from app.storage.netpbm import write_mask, write_ppm

logger = structlog.get_logger()


def gen_data(args: argparse.Namespace) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    config = RunConfig.load(args.config)
    out_dir = Path(args.out_dir or config.paths.data_dir)
    suite = build_edit_suite(args.count, config.seed, image_size=config.model.image_size,
                             antialias=config.bench.antialias)
    entries = []
    for case in suite:
        scene = case.scene
        image_rel = f"images/scene_{case.scene_id:05d}.ppm"
        mask_rel = f"masks/scene_{case.scene_id:05d}.pgm"
        write_ppm(out_dir / image_rel, scene.image)
        write_mask(out_dir / mask_rel, scene.mask)
        entries.append(ManifestEntry(
            seed=scene.spec.seed, spec=scene.spec, image_path=image_rel, mask_path=mask_rel,
            keypoints=scene.keypoints, p_src=scene.p_src.format(), p_edit=case.p_edit.format(),
        ))
    write_manifest(out_dir / MANIFEST_NAME, entries)
    write_json(out_dir / "config.json", config.echo())
    logger.info("Scenes written", count=len(entries), out_dir=str(out_dir))
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("gen-data", help="generate synthetic scenes")
    parser.add_argument("--config", help="run config JSON (defaults when omitted)")
    parser.add_argument("--out-dir", help="defaults to paths.data_dir")
    parser.add_argument("--count", type=int, required=True)
    parser.set_defaults(handler=gen_data)
