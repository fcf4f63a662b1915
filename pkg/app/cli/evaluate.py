"""
eval: run the benchmark over a generated dataset and write the report
"""
import argparse
import sys
from pathlib import Path
from typing import List

import structlog

from app.cli.common import manifest_path, resolve_model, worker_count, write_json
from app.cli.edit import resolve_edit_config
from app.core.config import settings
from app.core.errors import UsageError
from app.core.logging import progress_enabled
from app.models.attention import ConstraintMode
from app.models.edit import GenerationStart
from app.models.prompt import PromptPair
from app.models.scene import Scene
from app.services.benchmark_service import BenchmarkService, ablation_table
from app.services.scene_service import EditCase
from app.storage.manifest import read_manifest, resolve
from app.storage.netpbm import read_mask, read_ppm

logger = structlog.get_logger()


def parse_modes(text: str) -> List[ConstraintMode]:
    try:
        modes = [ConstraintMode(part.strip()) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise UsageError(f"--modes: {exc}") from exc
    if not modes:
        raise UsageError("--modes must name at least one mode")
    return modes


def load_cases(manifest: str, limit: int) -> List[EditCase]:
    cases = []
    for scene_id, entry in enumerate(read_manifest(manifest)[:limit]):
        scene = Scene(
            spec=entry.spec,
            image=read_ppm(resolve(manifest, entry.image_path)),
            mask=read_mask(resolve(manifest, entry.mask_path)),
            keypoints=entry.keypoints,
            p_src=PromptPair.parse(entry.p_src),
        )
        cases.append(EditCase(scene_id=scene_id, scene=scene, p_edit=PromptPair.parse(entry.p_edit)))
    return cases


def evaluate(args: argparse.Namespace) -> int:
    loaded = resolve_model(args)
    config = resolve_edit_config(loaded.config, args)
    if args.inferred_shape:
        config = config.with_section("bench", {"inferred_shape": True})
    modes = parse_modes(args.modes)
    manifest = args.data or manifest_path(config)
    report_path = args.report or config.paths.report
    cases = load_cases(manifest, args.limit or config.bench.scene_count)

    bench = BenchmarkService(loaded.editor(), config.bench, workers=worker_count(),
                             progress=progress_enabled(settings))
    report = bench.run_benchmark(
        cases, modes, config.edit.guidance(), config.edit.steps,
        identity_edit=args.identity, config_echo=config.echo(), start=config.edit.start,
    )
    write_json(Path(report_path), report.model_dump(mode="json"))
    sys.stdout.write(ablation_table(report).to_string(index=False) + "\n")
    logger.info("Report written", path=report_path, scenes=len(cases), modes=len(modes),
                inferred_shape=config.bench.inferred_shape)
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="benchmark constraint modes on a dataset")
    parser.add_argument("--ckpt", help="checkpoint (default paths.checkpoint of --config)")
    parser.add_argument("--config", help="run config or an echoed report; replaces the checkpoint sidecar config")
    parser.add_argument("--data", help="dataset manifest JSONL (default <paths.data_dir>/manifest.jsonl)")
    parser.add_argument("--modes", default="none,token_only,soft,hard")
    parser.add_argument("--report", help="defaults to paths.report")
    parser.add_argument("--steps", type=int)
    parser.add_argument("--wg", type=float)
    parser.add_argument("--start", type=GenerationStart, choices=list(GenerationStart))
    parser.add_argument("--limit", type=int, help="number of scenes (default bench.scene_count)")
    parser.add_argument("--identity", action="store_true", help="use the source prompt as the edit prompt")
    parser.add_argument("--inferred-shape", action="store_true",
                        help="edit with the oracle-inferred mask instead of the ground-truth mask")
    parser.set_defaults(handler=evaluate)
