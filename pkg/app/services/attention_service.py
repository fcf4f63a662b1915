"""
Inside-Outside Attention: constrain cross- and self-attention maps by an object mask.

Cross maps: inside-token columns are multiplied by the mask, outside-token
columns by its complement and the <bos> column is zeroed. Self maps: column q
is multiplied by the row mask if pixel q is inside, by its complement otherwise.
Rows are not renormalized unless asked to.
"""
from collections import defaultdict
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import DimensionError, GeometryError, PartitionError
from app.core.tensor import Tensor, mul, normalize_lastdim
from app.models.attention import (
    ConstraintMode, MaskLevel, MaskPlacement, MaskPyramid, ObjectMask, ReweightConfig,
)
from app.models.denoiser import AttentionKind, AttentionSite
from app.models.prompt import TokenizedPrompt
from app.services.tokenizer_service import validate_partition


def build_pyramid(mask: ObjectMask, sites: Iterable[AttentionSite]) -> MaskPyramid:
    """
    Downsample the mask to every attention resolution

    Args:
        mask: full-resolution object mask
        sites: attention sites of the denoiser

    Returns:
        MaskPyramid: soft level by area-average pooling, hard level by thresholding at 0.5 (ties inside)
    """
    H, W = mask.shape
    levels: Dict[Tuple[int, int], MaskLevel] = {}
    for site in sites:
        h, w = site.resolution
        if (h, w) in levels:
            continue
        if h < 1 or w < 1 or H % h or W % w:
            raise GeometryError(f"mask {H}x{W} cannot be pooled to {h}x{w}")
        fy, fx = H // h, W // w
        soft = mask.values.astype(np.float64).reshape(h, fy, w, fx).mean(axis=(1, 3)).reshape(-1)
        hard = (soft >= 0.5).astype(np.uint8)
        levels[(h, w)] = MaskLevel(resolution=(h, w), hard=hard, soft=soft)
    return MaskPyramid(source_shape=(H, W), levels=levels)


def _check_rows(M: Tensor, level: MaskLevel) -> None:
    if M.ndim != 3:
        raise DimensionError(f"attention map must be [heads, hw, cols], got {M.shape}")
    if M.shape[1] != level.hard.size:
        raise DimensionError(f"attention map has {M.shape[1]} rows, mask level has {level.hard.size} pixels")


def cross_weights(level: MaskLevel, j_in: Sequence[int], j_out: Sequence[int],
                  bos_index: int, token_count: int) -> np.ndarray:
    """[hw, tokens] multiplier for a cross map; always built from the hard mask"""
    validate_partition(j_in, j_out, bos_index, token_count)
    m = level.hard.astype(np.float64)
    weights = np.ones((m.size, token_count))
    weights[:, list(j_in)] = m[:, None]
    weights[:, list(j_out)] = 1.0 - m[:, None]
    weights[:, bos_index] = 0.0
    return weights


def self_weights(level: MaskLevel, mode: ConstraintMode) -> np.ndarray:
    """[hw, hw] multiplier for a self map; rows use the soft mask in soft mode"""
    rows = level.soft if mode == ConstraintMode.SOFT else level.hard.astype(np.float64)
    inside_col = level.hard.astype(bool)[None, :]
    return np.where(inside_col, rows[:, None], 1.0 - rows[:, None])


def constrain_cross(M: Tensor, level: MaskLevel, j_in: Sequence[int], j_out: Sequence[int],
                    bos_index: int, mode: ConstraintMode) -> Tensor:
    _check_rows(M, level)
    weights = cross_weights(level, j_in, j_out, bos_index, M.shape[2])
    if mode == ConstraintMode.NONE:
        return M
    return mul(M, Tensor(weights))


def constrain_self(M: Tensor, level: MaskLevel, mode: ConstraintMode) -> Tensor:
    _check_rows(M, level)
    if M.shape[1] != M.shape[2]:
        raise DimensionError(f"self-attention map must be square, got {M.shape}")
    if mode in (ConstraintMode.NONE, ConstraintMode.TOKEN_ONLY):
        return M
    return mul(M, Tensor(self_weights(level, mode)))


def reweight_cross(M: Tensor, config: ReweightConfig) -> Tensor:
    """Multiply the target token columns by a constant; entries may exceed 1 when scale > 1"""
    cols = M.shape[-1]
    for j in config.target:
        if not 0 <= j < cols:
            raise PartitionError(f"reweight column {j} out of range [0, {cols})")
    if config.is_identity:
        return M
    weights = np.ones(cols)
    weights[list(config.target)] = config.scale
    return mul(M, Tensor(weights))


class AttentionRecorder:
    """
    Collects attention statistics from an InsideOutsideAttention transform:
    spurious mass per call and head-averaged per-token cross maps.
    """

    def __init__(self, keep_heatmaps: bool = False):
        self.keep_heatmaps = keep_heatmaps
        self.inside_mass_outside = 0.0
        self.outside_mass_inside = 0.0
        self._heatmaps: Dict[Tuple[int, int], Dict[int, np.ndarray]] = defaultdict(dict)
        self._heatmap_counts: Dict[Tuple[int, int], int] = defaultdict(int)

    def record_cross(self, site: AttentionSite, level: MaskLevel, probs: np.ndarray,
                     j_in: Sequence[int], j_out: Sequence[int]) -> None:
        inside_out, outside_in = spurious_mass(probs, level, j_in, j_out)
        self.inside_mass_outside += inside_out
        self.outside_mass_inside += outside_in
        if not self.keep_heatmaps:
            return
        mean_map = probs.mean(axis=0)
        store = self._heatmaps[site.resolution]
        for j in range(mean_map.shape[1]):
            store[j] = store.get(j, 0.0) + mean_map[:, j]
        self._heatmap_counts[site.resolution] += 1

    def drain(self) -> Tuple[float, float]:
        """Return and reset the spurious mass accumulated since the last drain"""
        stats = (self.inside_mass_outside, self.outside_mass_inside)
        self.inside_mass_outside = 0.0
        self.outside_mass_inside = 0.0
        return stats

    def heatmaps(self) -> Dict[Tuple[int, int], Dict[int, np.ndarray]]:
        """Per resolution, per token column: average cross map reshaped to (h, w)"""
        out = {}
        for resolution, store in self._heatmaps.items():
            n = self._heatmap_counts[resolution]
            out[resolution] = {j: (acc / n).reshape(resolution) for j, acc in store.items()}
        return out


class InsideOutsideAttention:
    """
    Attention transform hook for one prompt and mask.

    Dispatches cross maps to (optional reweight then) constrain_cross and self
    maps to constrain_self. Counts invocations per site kind.
    """

    def __init__(self, pyramid: MaskPyramid, prompt: TokenizedPrompt, mode: ConstraintMode,
                 reweight: Optional[ReweightConfig] = None,
                 placement: MaskPlacement = MaskPlacement.POST_SOFTMAX,
                 renormalize: bool = False,
                 recorder: Optional[AttentionRecorder] = None):
        self.pyramid = pyramid
        self.prompt = prompt
        self.mode = mode
        self.reweight = reweight or ReweightConfig()
        self.renormalize = renormalize or placement == MaskPlacement.PRE_SOFTMAX
        self.recorder = recorder
        self.enabled = True
        self.counts: Dict[AttentionKind, int] = {AttentionKind.CROSS: 0, AttentionKind.SELF: 0}
        validate_partition(prompt.j_in, prompt.j_out, prompt.bos_index, prompt.length)

    @property
    def calls(self) -> int:
        return sum(self.counts.values())

    def reset_counts(self) -> None:
        for kind in self.counts:
            self.counts[kind] = 0

    def _constrain(self, site: AttentionSite, M: Tensor, level: MaskLevel) -> Tensor:
        if site.kind == AttentionKind.CROSS:
            M = reweight_cross(M, self.reweight)
            return constrain_cross(M, level, self.prompt.j_in, self.prompt.j_out,
                                   self.prompt.bos_index, self.mode)
        return constrain_self(M, level, self.mode)

    def __call__(self, site: AttentionSite, M: Tensor) -> Tensor:
        level = self.pyramid.entry(site)
        if site.pixels != level.hard.size:
            raise GeometryError(f"site {site.resolution} does not match its mask level")
        self.counts[site.kind] += 1
        if not self.enabled or (self.mode == ConstraintMode.NONE and self.reweight.is_identity):
            out = M
        else:
            out = self._constrain(site, M, level)
            if self.renormalize and self.mode != ConstraintMode.NONE:
                out = normalize_lastdim(out)
        if self.recorder is not None and site.kind == AttentionKind.CROSS:
            self.recorder.record_cross(site, level, out.data, self.prompt.j_in, self.prompt.j_out)
        return out


def make_transform(pyramid: MaskPyramid, prompt: TokenizedPrompt, mode: ConstraintMode,
                   reweight: Optional[ReweightConfig] = None, **options) -> InsideOutsideAttention:
    return InsideOutsideAttention(pyramid, prompt, mode, reweight=reweight, **options)


def identity_transform(site: AttentionSite, M: Tensor) -> Tensor:
    return M


def spurious_mass(M: np.ndarray, level: MaskLevel, j_in: Sequence[int], j_out: Sequence[int]) -> Tuple[float, float]:
    """(inside-token mass on outside pixels, outside-token mass on inside pixels) of one cross map"""
    outside = level.hard == 0
    return (float(M[:, outside][:, :, list(j_in)].sum()),
            float(M[:, ~outside][:, :, list(j_out)].sum()))
