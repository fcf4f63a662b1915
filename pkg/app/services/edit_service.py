"""
Service running shape-guided edits: inside-outside inversion followed by
guided generation with per-step background blending
"""
import dataclasses
import math
from typing import List, Optional, Protocol, Tuple

import numpy as np
import structlog

from app.core.errors import (
    ConsistencyError, DimensionError, EmptyMaskError, GeometryError, NumericError, ParameterError,
)
from app.core.tensor import no_grad
from app.models.attention import ConstraintMode, MaskPlacement, ObjectMask, ReweightConfig
from app.models.diffusion import GuidanceAnchor, GuidanceConfig, GuidanceSpace, NoiseSchedule
from app.models.edit import EditRequest, EditResult, GenerationStart, InversionTrajectory, StepDiagnostics
from app.models.prompt import PromptPair, TokenizedPrompt, Vocabulary
from app.models.scene import ShapeClass
from app.services.attention_service import AttentionRecorder, build_pyramid, make_transform
from app.services.denoiser_service import Denoiser
from app.services.diffusion_service import combine, ddim_invert_step, ddim_step, make_grid
from app.services.scene_service import MAX_AREA, MIN_AREA, array_to_image, oracle_segment
from app.services.tokenizer_service import changed_token_indices, null_prompt, tokenize

logger = structlog.get_logger()


class Codec(Protocol):
    def encode(self, x: np.ndarray) -> np.ndarray:
        ...

    def decode(self, z: np.ndarray) -> np.ndarray:
        ...


class IdentityCodec:
    """Pixel-space diffusion: latents are the images themselves"""

    def encode(self, x: np.ndarray) -> np.ndarray:
        return np.array(x, copy=True)

    def decode(self, z: np.ndarray) -> np.ndarray:
        return np.array(z, copy=True)


def blend_background(z: np.ndarray, z_bar: np.ndarray, mask: ObjectMask) -> np.ndarray:
    """Keep z inside the mask and copy z_bar outside it, broadcasting the mask over channels"""
    if z.shape != z_bar.shape:
        raise DimensionError(f"blend: latent shapes {z.shape} and {z_bar.shape} differ")
    if z.shape[-2:] != mask.shape:
        raise DimensionError(f"blend: mask {mask.shape} does not match latent {z.shape}")
    return np.where(mask.as_bool(), z, z_bar)


def shape_class_of(prompt: PromptPair) -> ShapeClass:
    for word in prompt.inside:
        try:
            return ShapeClass(word)
        except ValueError:
            continue
    raise ParameterError(f"prompt '{prompt.format()}' names no known object class")


def _check_finite(z: np.ndarray, phase: str, step: int) -> None:
    if not np.isfinite(z).all():
        raise NumericError(f"non-finite latent at {phase} step {step}")


class EditService:
    """Service class for inversion, guided generation and shape inference"""

    def __init__(self, model: Denoiser, schedule: NoiseSchedule, vocab: Vocabulary,
                 codec: Optional[Codec] = None, oracle_tolerance: float = 40.0, cleanup_votes: int = 7):
        if model.config.T_train != schedule.T_train:
            raise ParameterError("model and schedule disagree on T_train")
        self.model = model
        self.schedule = schedule
        self.vocab = vocab
        self.codec = codec or IdentityCodec()
        self.oracle_tolerance = oracle_tolerance
        self.cleanup_votes = cleanup_votes

    @property
    def budget(self) -> int:
        return self.model.config.token_budget

    def tokenize(self, prompt: PromptPair) -> TokenizedPrompt:
        return tokenize(prompt, self.vocab, self.budget)

    # -- shape inference -----------------------------------------------------

    def infer_shape(self, x_src: np.ndarray, p_src: PromptPair,
                    warnings: Optional[List[str]] = None) -> ObjectMask:
        """
        Segment the object named by the source prompt

        Args:
            x_src: source image in model space [C, H, W]
            p_src: source prompt; its inside text must name a known class
            warnings: collects the area-bounds warning when given

        Returns:
            ObjectMask: oracle segmentation of the object
        """
        shape = shape_class_of(p_src)
        striped = "striped" in p_src.inside
        mask = oracle_segment(array_to_image(x_src), shape, striped, self.oracle_tolerance, self.cleanup_votes)
        if mask.area == 0:
            raise EmptyMaskError(f"no {shape.value} found in the source image")
        if not MIN_AREA <= mask.area_fraction <= MAX_AREA:
            message = f"inferred mask covers {mask.area_fraction:.1%} of the image, outside [{MIN_AREA:.0%}, {MAX_AREA:.0%}]"
            logger.warning("Mask area out of bounds", area_fraction=round(mask.area_fraction, 4))
            if warnings is not None:
                warnings.append(message)
        return mask

    # -- inversion -----------------------------------------------------------

    def _check_mask(self, x_src: np.ndarray, mask: ObjectMask) -> None:
        if tuple(x_src.shape[-2:]) != mask.shape:
            raise GeometryError(f"mask {mask.shape} does not match image {tuple(x_src.shape)}")

    def inside_outside_inversion(self, x_src: np.ndarray, p_src: PromptPair, mask: ObjectMask,
                                 mode: ConstraintMode, steps: int,
                                 placement: MaskPlacement = MaskPlacement.POST_SOFTMAX,
                                 renormalize: bool = False,
                                 diagnostics: Optional[List[StepDiagnostics]] = None) -> InversionTrajectory:
        """
        Deterministic DDIM inversion with the source prompt's inside-outside constraint.
        Conditional model only; no guidance.
        """
        self._check_mask(x_src, mask)
        if steps < 1:
            raise ParameterError(f"step count must be >= 1, got {steps}")
        tokens = self.tokenize(p_src)
        pyramid = build_pyramid(mask, self.model.sites)
        recorder = AttentionRecorder()
        hook = make_transform(pyramid, tokens, mode, placement=placement, renormalize=renormalize,
                              recorder=recorder)
        grid = make_grid(self.schedule.T_train, steps)

        z = self.codec.encode(x_src)
        latents = [z]
        with no_grad():
            for k, t_prev, t in grid.ascending():
                eps = self.model.forward_eps(z, t, tokens, hook).data
                z = ddim_invert_step(z, eps, t_prev, t, self.schedule)
                _check_finite(z, "inversion", k)
                latents.append(z)
                inside_out, outside_in = recorder.drain()
                if diagnostics is not None:
                    diagnostics.append(StepDiagnostics(
                        phase="invert", step=k, t=t,
                        inside_mass_outside=inside_out, outside_mass_inside=outside_in,
                    ))
        logger.debug("Inversion finished", steps=steps, mode=mode.value, hook_calls=hook.calls)
        return InversionTrajectory(latents=latents, mode=mode, prompt_ids=tokens.ids, mask_digest=mask.digest())

    # -- generation ----------------------------------------------------------

    def _check_trajectory(self, request: EditRequest, mask: ObjectMask, trajectory: InversionTrajectory) -> None:
        problems = []
        if trajectory.steps != request.steps:
            problems.append(f"steps {trajectory.steps} != {request.steps}")
        if trajectory.mode != request.mode:
            problems.append(f"mode {trajectory.mode.value} != {request.mode.value}")
        if trajectory.mask_digest != mask.digest():
            problems.append("mask differs")
        if trajectory.prompt_ids != self.tokenize(request.p_src).ids:
            problems.append("source prompt differs")
        z0 = self.codec.encode(request.x_src)
        if trajectory[0].shape != z0.shape or not np.array_equal(trajectory[0], z0):
            problems.append("z_0 is not the encoded source image")
        if problems:
            raise ConsistencyError("trajectory does not match the request: " + "; ".join(problems))

    def _resolve_mask(self, request: EditRequest, warnings: List[str]) -> ObjectMask:
        mask = request.mask if request.mask is not None else self.infer_shape(request.x_src, request.p_src, warnings)
        self._check_mask(request.x_src, mask)
        return mask

    def _guided_step(self, request: EditRequest, z: np.ndarray, t: int, t_prev: int,
                     edit_tokens: TokenizedPrompt, null_tokens: TokenizedPrompt, hook) -> np.ndarray:
        guidance = request.guidance
        eps_cond = self.model.forward_eps(z, t, edit_tokens, hook).data
        needs_uncond = (
            request.run_unconditional
            or guidance.w_g > 0
            or guidance.anchor == GuidanceAnchor.UNCONDITIONAL
        )
        if not needs_uncond:
            return ddim_step(z, eps_cond, t, t_prev, self.schedule)
        eps_uncond = self.model.forward_eps(z, t, null_tokens, hook).data
        if guidance.space == GuidanceSpace.EPSILON:
            eps = combine(eps_cond, eps_uncond, guidance.w_g, guidance.anchor)
            return ddim_step(z, eps, t, t_prev, self.schedule)
        z_cond = ddim_step(z, eps_cond, t, t_prev, self.schedule)
        z_uncond = ddim_step(z, eps_uncond, t, t_prev, self.schedule)
        return combine(z_cond, z_uncond, guidance.w_g, guidance.anchor)

    def generate_edit(self, request: EditRequest, trajectory: Optional[InversionTrajectory] = None,
                      recorder: Optional[AttentionRecorder] = None) -> EditResult:
        """
        Run the full edit: invert (unless a trajectory is supplied), then generate
        from the inverted latent (or seeded noise) with the edit prompt's constraint
        on both guidance passes and copy the inverted background outside the mask
        at every step.

        Args:
            request: the edit request
            trajectory: a trajectory previously inverted for this request
            recorder: optional recorder for attention statistics and heatmaps

        Returns:
            EditResult: edited image, trajectory, diagnostics and warnings
        """
        if not 0.0 <= request.guidance_window <= 1.0:
            raise ParameterError(f"guidance window must lie in [0, 1], got {request.guidance_window}")
        warnings: List[str] = []
        diagnostics: List[StepDiagnostics] = []
        mask = self._resolve_mask(request, warnings)
        if trajectory is None:
            trajectory = self.inside_outside_inversion(
                request.x_src, request.p_src, mask, request.mode, request.steps,
                placement=request.placement, renormalize=request.renormalize, diagnostics=diagnostics,
            )
        self._check_trajectory(request, mask, trajectory)

        src_tokens = self.tokenize(request.p_src)
        edit_tokens = self.tokenize(request.p_edit)
        null_tokens = null_prompt(self.budget)
        reweight = ReweightConfig(
            scale=request.guidance.reweight_scale,
            target=changed_token_indices(src_tokens, edit_tokens),
        )
        recorder = recorder or AttentionRecorder()
        hook = make_transform(build_pyramid(mask, self.model.sites), edit_tokens, request.mode,
                              reweight=reweight, placement=request.placement,
                              renormalize=request.renormalize, recorder=recorder)
        grid = make_grid(self.schedule.T_train, request.steps)
        constrained_steps = math.ceil(request.guidance_window * request.steps)

        z = self._starting_latent(request, trajectory)
        with no_grad():
            for k, t, t_prev in grid.descending():
                hook.enabled = (request.steps - k) < constrained_steps
                z_next = self._guided_step(request, z, t, t_prev, edit_tokens, null_tokens, hook)
                delta = 0.0
                if request.blend:
                    blended = blend_background(z_next, trajectory[k - 1], mask)
                    delta = float(np.linalg.norm((blended - z_next).astype(np.float64)))
                    z_next = blended
                _check_finite(z_next, "generation", k)
                z = z_next
                inside_out, outside_in = recorder.drain()
                diagnostics.append(StepDiagnostics(
                    phase="generate", step=k, t=t, inside_mass_outside=inside_out,
                    outside_mass_inside=outside_in, blend_delta=delta,
                ))
                logger.debug("Generation step", step=k, t=t, blend_delta=round(delta, 6))

        x_edit = self.codec.decode(z)
        if request.blend and isinstance(self.codec, IdentityCodec):
            self._verify_locality(request.x_src, x_edit, mask)
        return EditResult(x_edit=x_edit, trajectory=trajectory, mask=mask,
                          diagnostics=diagnostics, warnings=warnings, hook_calls=hook.calls)

    @staticmethod
    def _starting_latent(request: EditRequest, trajectory: InversionTrajectory) -> np.ndarray:
        z_top = trajectory[request.steps]
        if request.start == GenerationStart.NOISE:
            rng = np.random.default_rng(request.seed)
            return rng.standard_normal(z_top.shape).astype(z_top.dtype)
        return z_top.copy()

    @staticmethod
    def _verify_locality(x_src: np.ndarray, x_edit: np.ndarray, mask: ObjectMask) -> None:
        outside = ~mask.as_bool()
        if not np.array_equal(x_edit[:, outside], x_src[:, outside]):
            raise ConsistencyError("edited image differs from the source outside the mask")

    def simultaneous_edit(self, request: EditRequest, trajectory: Optional[InversionTrajectory] = None,
                          recorder: Optional[AttentionRecorder] = None) -> EditResult:
        """Edit inside and outside at once; the background is generated rather than copied"""
        if not request.p_edit.inside or not request.p_edit.outside:
            raise ParameterError("simultaneous edits need both inside and outside edit text")
        return self.generate_edit(dataclasses.replace(request, blend=False), trajectory, recorder=recorder)

    def reconstruct(self, x_src: np.ndarray, p_src: PromptPair, mask: Optional[ObjectMask] = None,
                    steps: int = 50, mode: ConstraintMode = ConstraintMode.HARD) -> EditResult:
        """Invert and regenerate with the source prompt and no guidance"""
        request = EditRequest(x_src=x_src, p_src=p_src, p_edit=p_src, mask=mask,
                              guidance=GuidanceConfig(w_g=0.0), steps=steps, mode=mode)
        return self.generate_edit(request)


def region_deltas(x_src: np.ndarray, x_edit: np.ndarray, mask: ObjectMask) -> Tuple[float, float]:
    """Mean squared change inside and outside the mask"""
    inside = mask.as_bool()
    diff = (np.asarray(x_edit, dtype=np.float64) - np.asarray(x_src, dtype=np.float64)) ** 2
    inside_delta = float(diff[:, inside].mean()) if inside.any() else 0.0
    outside_delta = float(diff[:, ~inside].mean()) if (~inside).any() else 0.0
    return inside_delta, outside_delta
