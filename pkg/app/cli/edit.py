"""
edit, reconstruct and invert commands
"""
import argparse
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import structlog

from app.cli.common import LoadedModel, load_image, load_mask, resolve_model, write_json
from app.core.errors import ConsistencyError
from app.models.attention import ConstraintMode, MaskPlacement, ObjectMask
from app.models.diffusion import GuidanceAnchor, GuidanceSpace
from app.models.edit import EditRequest, EditResult, GenerationStart
from app.models.prompt import PromptPair
from app.models.run_config import RunConfig
from app.services.attention_service import AttentionRecorder
from app.services.edit_service import EditService
from app.services.metrics_service import psnr
from app.services.scene_service import array_to_image
from app.storage.checkpoint import save_trajectory
from app.storage.manifest import write_jsonl
from app.storage.netpbm import read_ppm, write_heatmap, write_ppm

logger = structlog.get_logger()

EDIT_OVERRIDES = {
    "steps": "steps",
    "wg": "w_g",
    "mode": "mode",
    "reweight": "reweight_scale",
    "anchor": "anchor",
    "guidance_space": "guidance_space",
    "placement": "placement",
    "guidance_window": "guidance_window",
    "start": "start",
}


def resolve_edit_config(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    """Apply command-line overrides on top of the edit section"""
    update: Dict[str, Any] = {}
    for flag, field_name in EDIT_OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            update[field_name] = value
    if getattr(args, "renormalize", False):
        update["renormalize"] = True
    if getattr(args, "skip_unconditional", False):
        update["run_unconditional"] = False
    return config.with_section("edit", update)


def build_request(x_src: np.ndarray, p_src: PromptPair, p_edit: PromptPair, mask: Optional[ObjectMask],
                  config: RunConfig) -> EditRequest:
    edit = config.edit
    return EditRequest(
        x_src=x_src, p_src=p_src, p_edit=p_edit, mask=mask, guidance=edit.guidance(),
        steps=edit.steps, mode=edit.mode, seed=config.seed, placement=edit.placement,
        renormalize=edit.renormalize, run_unconditional=edit.run_unconditional,
        guidance_window=edit.guidance_window, start=edit.start,
    )


def check_output_locality(source: np.ndarray, edited: np.ndarray, mask: ObjectMask) -> None:
    """The written image must equal the source byte for byte outside the mask"""
    outside = ~mask.as_bool()
    if not np.array_equal(source[outside], edited[outside]):
        raise ConsistencyError("edited image differs from the source outside the mask")


def dump_attention(directory: str, recorder: AttentionRecorder, loaded: LoadedModel, p_edit: PromptPair) -> int:
    words = loaded.vocab.id_to_word()
    tokens = loaded.editor().tokenize(p_edit)
    written = 0
    for (h, w), maps in recorder.heatmaps().items():
        for j, heat in maps.items():
            word = words.get(tokens.ids[j], "unk").strip("<>")
            write_heatmap(Path(directory) / f"attn_{h}x{w}_tok{j:02d}_{word}.pgm", heat)
            written += 1
    return written


def _result_document(command: str, config: RunConfig, args: argparse.Namespace, result: EditResult,
                     mask_source: str, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    document = {
        "command": command,
        "config": config.echo(),
        "image": args.image,
        "src": args.src,
        "mask_source": mask_source,
        "mask_area_fraction": result.mask.area_fraction,
        "warnings": result.warnings,
        "hook_calls": result.hook_calls,
        "diagnostics": [d.model_dump() for d in result.diagnostics],
    }
    document.update(extra or {})
    return document


def edit(args: argparse.Namespace) -> int:
    loaded = resolve_model(args)
    config = resolve_edit_config(loaded.config, args)
    source = read_ppm(args.image)
    x_src = load_image(args.image)
    mask = load_mask(args.mask)
    p_src, p_edit = PromptPair.parse(args.src), PromptPair.parse(args.edit)
    request = build_request(x_src, p_src, p_edit, mask, config)

    editor: EditService = loaded.editor()
    recorder = AttentionRecorder(keep_heatmaps=bool(args.dump_attention))
    logger.info("Edit started", src=args.src, edit=args.edit, mode=config.edit.mode.value,
                w_g=config.edit.w_g, steps=config.edit.steps)
    if args.simultaneous:
        result = editor.simultaneous_edit(request, recorder=recorder)
    else:
        result = editor.generate_edit(request, recorder=recorder)

    edited = array_to_image(result.x_edit)
    if not args.simultaneous:
        check_output_locality(source, edited, result.mask)
    write_ppm(args.out, edited)
    write_json(Path(f"{args.out}.json"), _result_document(
        "edit", config, args, result, "file" if mask is not None else "inferred",
        {"edit": args.edit, "simultaneous": args.simultaneous},
    ))
    if args.diagnostics:
        write_jsonl(args.diagnostics, result.diagnostics)
    if args.dump_attention:
        count = dump_attention(args.dump_attention, recorder, loaded, p_edit)
        logger.info("Attention heatmaps written", count=count, directory=args.dump_attention)
    logger.info("Edit finished", out=args.out, warnings=len(result.warnings))
    return 0


def reconstruct(args: argparse.Namespace) -> int:
    loaded = resolve_model(args)
    config = resolve_edit_config(loaded.config, args)
    source = read_ppm(args.image)
    p_src = PromptPair.parse(args.src)
    result = loaded.editor().reconstruct(load_image(args.image), p_src, load_mask(args.mask),
                                         steps=config.edit.steps, mode=config.edit.mode)
    edited = array_to_image(result.x_edit)
    check_output_locality(source, edited, result.mask)
    inside_psnr = psnr(source, edited, region=result.mask)
    write_ppm(args.out, edited)
    write_json(Path(f"{args.out}.json"), _result_document(
        "reconstruct", config, args, result, "file" if args.mask else "inferred",
        {"psnr_inside": None if np.isinf(inside_psnr) else inside_psnr},
    ))
    logger.info("Reconstruction finished", out=args.out, psnr_inside=inside_psnr)
    return 0


def invert(args: argparse.Namespace) -> int:
    loaded = resolve_model(args)
    config = resolve_edit_config(loaded.config, args)
    editor = loaded.editor()
    x_src = load_image(args.image)
    p_src = PromptPair.parse(args.src)
    warnings: List[str] = []
    mask = load_mask(args.mask) or editor.infer_shape(x_src, p_src, warnings)
    trajectory = editor.inside_outside_inversion(
        x_src, p_src, mask, config.edit.mode, config.edit.steps,
        placement=config.edit.placement, renormalize=config.edit.renormalize,
    )
    save_trajectory(args.dump_trajectory, trajectory)
    write_json(Path(f"{args.dump_trajectory}.json"), {
        "command": "invert",
        "config": config.echo(),
        "image": args.image,
        "src": args.src,
        "mask_digest": trajectory.mask_digest,
        "prompt_ids": list(trajectory.prompt_ids),
        "warnings": warnings,
    })
    logger.info("Trajectory written", path=args.dump_trajectory, latents=len(trajectory.latents))
    return 0


def _common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--ckpt", help="checkpoint (default paths.checkpoint of --config)")
    parser.add_argument("--config", help="run config or an echoed result; replaces the checkpoint sidecar config")
    parser.add_argument("--image", required=True, help="source PPM")
    parser.add_argument("--mask", help="object mask PGM; inferred from --src when omitted")
    parser.add_argument("--src", required=True, help='source prompt "inside words|outside words"')
    parser.add_argument("--mode", type=ConstraintMode, choices=list(ConstraintMode))
    parser.add_argument("--steps", type=int)
    parser.add_argument("--placement", type=MaskPlacement, choices=list(MaskPlacement))
    parser.add_argument("--renormalize", action="store_true")


def register(subparsers) -> None:
    parser = subparsers.add_parser("edit", help="shape-guided edit of one image")
    _common_arguments(parser)
    parser.add_argument("--edit", required=True, help='edit prompt "inside words|outside words"')
    parser.add_argument("--wg", type=float)
    parser.add_argument("--reweight", type=float, help="upweight changed token columns")
    parser.add_argument("--anchor", type=GuidanceAnchor, choices=list(GuidanceAnchor))
    parser.add_argument("--guidance-space", type=GuidanceSpace, choices=list(GuidanceSpace))
    parser.add_argument("--guidance-window", type=float)
    parser.add_argument("--start", type=GenerationStart, choices=list(GenerationStart),
                        help="start generation from the inverted latent or seeded noise")
    parser.add_argument("--skip-unconditional", action="store_true",
                        help="skip the unconditional pass when guidance is zero")
    parser.add_argument("--simultaneous", action="store_true", help="edit inside and outside together")
    parser.add_argument("--out", required=True)
    parser.add_argument("--diagnostics", help="per-step diagnostics JSONL")
    parser.add_argument("--dump-attention", help="directory for averaged cross-attention PGM heatmaps")
    parser.set_defaults(handler=edit)

    parser = subparsers.add_parser("reconstruct", help="invert and regenerate with the source prompt")
    _common_arguments(parser)
    parser.add_argument("--out", required=True)
    parser.set_defaults(handler=reconstruct)

    parser = subparsers.add_parser("invert", help="dump the inside-outside inversion trajectory")
    _common_arguments(parser)
    parser.add_argument("--dump-trajectory", required=True)
    parser.set_defaults(handler=invert)
