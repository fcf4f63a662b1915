"""
Noise schedule, deterministic DDIM updates and guidance combination
"""
import math

import numpy as np

from app.core.errors import DimensionError, NumericError, ParameterError
from app.models.diffusion import GuidanceAnchor, NoiseSchedule, TimestepGrid


def make_schedule(T_train: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """
    Linear DDPM beta schedule

    Args:
        T_train: number of training timesteps
        beta_start: beta at t = 1
        beta_end: beta at t = T_train

    Returns:
        NoiseSchedule: betas[1..T] (stored 0-based) and alpha_bars[0..T] with alpha_bars[0] = 1
    """
    if T_train < 1:
        raise ParameterError(f"T_train must be >= 1, got {T_train}")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise ParameterError(f"need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T_train, dtype=np.float64)
    alpha_bars = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(T_train=T_train, betas=betas, alpha_bars=alpha_bars)


def make_grid(T_train: int, steps: int) -> TimestepGrid:
    """Uniform-stride grid t_k = floor(k * T / S), k = 1..S, stored as [t_S, ..., t_1]"""
    if steps < 1:
        raise ParameterError(f"step count must be >= 1, got {steps}")
    if steps > T_train:
        raise ParameterError(f"step count {steps} exceeds T_train {T_train}")
    ascending = [(k * T_train) // steps for k in range(1, steps + 1)]
    return TimestepGrid(timesteps=tuple(reversed(ascending)))


def _check_t(schedule: NoiseSchedule, t: int, name: str = "t") -> None:
    if not 0 <= t <= schedule.T_train:
        raise ParameterError(f"{name}={t} outside [0, {schedule.T_train}]")


def _check_shapes(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def q_sample(x0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    _check_shapes(x0, eps, "q_sample")
    _check_t(schedule, t)
    a = schedule.alpha_bar(t)
    if a == 1.0:
        return x0.copy()
    return math.sqrt(a) * x0 + math.sqrt(1.0 - a) * eps


def predict_x0(z_t: np.ndarray, eps: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
    a = schedule.alpha_bar(t)
    if a <= 0.0:
        raise NumericError(f"alpha_bar is zero at t={t}")
    return (z_t - math.sqrt(1.0 - a) * eps) / math.sqrt(a)


def ddim_step(z_t: np.ndarray, eps: np.ndarray, t: int, t_prev: int, schedule: NoiseSchedule) -> np.ndarray:
    """Deterministic (eta = 0) update from t down to t_prev"""
    _check_shapes(z_t, eps, "ddim_step")
    _check_t(schedule, t)
    _check_t(schedule, t_prev, "t_prev")
    if t < t_prev:
        raise ParameterError(f"ddim_step needs t >= t_prev, got t={t}, t_prev={t_prev}")
    if t == t_prev:
        return z_t.copy()
    x0 = predict_x0(z_t, eps, t, schedule)
    a_prev = schedule.alpha_bar(t_prev)
    return math.sqrt(a_prev) * x0 + math.sqrt(1.0 - a_prev) * eps


def ddim_invert_step(z_prev: np.ndarray, eps: np.ndarray, t_prev: int, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Algebraic inverse of ddim_step for the same noise prediction"""
    _check_shapes(z_prev, eps, "ddim_invert_step")
    _check_t(schedule, t)
    _check_t(schedule, t_prev, "t_prev")
    if t < t_prev:
        raise ParameterError(f"ddim_invert_step needs t >= t_prev, got t_prev={t_prev}, t={t}")
    if t == t_prev:
        return z_prev.copy()
    x0 = predict_x0(z_prev, eps, t_prev, schedule)
    a = schedule.alpha_bar(t)
    return math.sqrt(a) * x0 + math.sqrt(1.0 - a) * eps


def _check_guidance(z_cond: np.ndarray, z_uncond: np.ndarray, w_g: float) -> None:
    _check_shapes(z_cond, z_uncond, "cfg_combine")
    if w_g < 0:
        raise ParameterError(f"guidance scale must be >= 0, got {w_g}")


def cfg_combine(z_cond: np.ndarray, z_uncond: np.ndarray, w_g: float) -> np.ndarray:
    """Extrapolate away from the unconditional prediction, anchored at the conditional one"""
    _check_guidance(z_cond, z_uncond, w_g)
    if w_g == 0:
        return z_cond.copy()
    return z_cond + w_g * (z_cond - z_uncond)


def cfg_combine_unconditional(z_cond: np.ndarray, z_uncond: np.ndarray, w_g: float) -> np.ndarray:
    """The common form, anchored at the unconditional prediction"""
    _check_guidance(z_cond, z_uncond, w_g)
    return z_uncond + w_g * (z_cond - z_uncond)


def combine(z_cond: np.ndarray, z_uncond: np.ndarray, w_g: float, anchor: GuidanceAnchor) -> np.ndarray:
    if anchor == GuidanceAnchor.UNCONDITIONAL:
        return cfg_combine_unconditional(z_cond, z_uncond, w_g)
    return cfg_combine(z_cond, z_uncond, w_g)
