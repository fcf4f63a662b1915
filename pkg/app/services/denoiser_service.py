"""
Toy text-conditional noise-prediction denoiser.

Pixels are flattened to a length-HW sequence and projected to d_model. Each
block runs self-attention over pixels, cross-attention over prompt tokens and
an MLP. Every attention map passes through an optional transform hook right
after the softmax and before it is applied to the values.
"""
import math
from collections import OrderedDict
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import structlog

from app.core.errors import CheckpointError, DimensionError, ParameterError
from app.core.tensor import (
    Tensor, add, as_tensor, default_dtype, embedding_lookup, layer_norm, make_rng,
    matmul, reshape, scale, silu, softmax_lastdim, transpose,
)
from app.models.denoiser import AttentionKind, AttentionSite, DenoiserConfig
from app.models.prompt import TokenizedPrompt

logger = structlog.get_logger()

AttentionTransform = Callable[[AttentionSite, Tensor], Tensor]

MIDDLE = "mid"


def timestep_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of a scalar timestep"""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / max(half, 1))
    args = t * freqs
    emb = np.concatenate([np.sin(args), np.cos(args)])
    if dim % 2:
        emb = np.concatenate([emb, [0.0]])
    return emb.astype(default_dtype())


def _pool_matrix(size: int) -> np.ndarray:
    """[(size/2)^2, size^2] matrix averaging 2x2 pixel blocks"""
    half = size // 2
    pool = np.zeros((half * half, size * size))
    for y in range(size):
        for x in range(size):
            pool[(y // 2) * half + x // 2, y * size + x] = 0.25
    return pool


class Denoiser:
    """Service holding the denoiser weights and running the forward pass"""

    def __init__(self, config: DenoiserConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._init_parameters(make_rng(seed))
        self._sites = self._build_sites()
        if config.pooled_middle:
            pool = _pool_matrix(config.image_size)
            self._pool = Tensor(pool)
            self._unpool = Tensor(4.0 * pool.T)

    # -- parameters ----------------------------------------------------------

    def _add(self, name: str, value: np.ndarray) -> None:
        self._params[name] = Tensor(value, requires_grad=True, name=name)

    def _linear(self, rng: np.random.Generator, name: str, fan_in: int, fan_out: int, bias: bool = True) -> None:
        self._add(f"{name}.weight", rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in))
        if bias:
            self._add(f"{name}.bias", np.zeros(fan_out))

    def _norm(self, name: str, d: int) -> None:
        self._add(f"{name}.gain", np.ones(d))
        self._add(f"{name}.bias", np.zeros(d))

    def _block_parameters(self, rng: np.random.Generator, prefix: str) -> None:
        d = self.config.d_model
        hidden = d * self.config.mlp_ratio
        for kind in ("self", "cross"):
            self._norm(f"{prefix}.{kind}.norm", d)
            for proj in ("q", "k", "v", "o"):
                self._linear(rng, f"{prefix}.{kind}.{proj}", d, d, bias=False)
        self._norm(f"{prefix}.mlp.norm", d)
        self._linear(rng, f"{prefix}.mlp.fc1", d, hidden)
        self._linear(rng, f"{prefix}.mlp.fc2", hidden, d)

    def _init_parameters(self, rng: np.random.Generator) -> None:
        cfg = self.config
        d = cfg.d_model
        hw = cfg.image_size * cfg.image_size
        self._linear(rng, "in_proj", cfg.channels, d)
        self._add("pos_embed", 0.02 * rng.standard_normal((hw, d)))
        self._linear(rng, "time", d, d)
        self._add("token_embed", 0.02 * rng.standard_normal((cfg.vocab_size, d)))
        self._add("slot_embed", 0.02 * rng.standard_normal((cfg.token_count, d)))
        for i in range(cfg.n_layers):
            self._block_parameters(rng, f"blocks.{i}")
        if cfg.pooled_middle:
            self._block_parameters(rng, f"blocks.{MIDDLE}")
        self._norm("out.norm", d)
        self._linear(rng, "out", d, cfg.channels)

    def parameters(self) -> "OrderedDict[str, Tensor]":
        """Ordered name -> Tensor mapping; the order is fixed for a config"""
        return self._params

    def requires_grad_(self, flag: bool = True) -> "Denoiser":
        for p in self._params.values():
            p.requires_grad = flag
        return self

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        missing = [name for name in self._params if name not in state]
        unexpected = [name for name in state if name not in self._params]
        if missing or unexpected:
            raise CheckpointError(f"checkpoint does not match model: missing={missing[:3]} unexpected={unexpected[:3]}")
        for name, tensor in self._params.items():
            value = np.asarray(state[name])
            if value.shape != tensor.shape:
                raise CheckpointError(f"{name}: checkpoint shape {value.shape} != model shape {tensor.shape}")
            tensor.data = value.astype(tensor.data.dtype)

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data) for name, p in self._params.items())

    # -- sites ---------------------------------------------------------------

    def _build_sites(self) -> List[AttentionSite]:
        cfg = self.config
        full = (cfg.image_size, cfg.image_size)
        sites = []
        for i in range(cfg.n_layers):
            sites.append(AttentionSite(layer_index=i, kind=AttentionKind.SELF, resolution=full))
            sites.append(AttentionSite(layer_index=i, kind=AttentionKind.CROSS, resolution=full))
        if cfg.pooled_middle:
            half = (cfg.image_size // 2, cfg.image_size // 2)
            sites.append(AttentionSite(layer_index=cfg.n_layers, kind=AttentionKind.SELF, resolution=half))
            sites.append(AttentionSite(layer_index=cfg.n_layers, kind=AttentionKind.CROSS, resolution=half))
        return sites

    @property
    def sites(self) -> List[AttentionSite]:
        return list(self._sites)

    def _site(self, layer_index: int, kind: AttentionKind) -> AttentionSite:
        return self._sites[2 * layer_index + (0 if kind == AttentionKind.SELF else 1)]

    # -- forward -------------------------------------------------------------

    def _p(self, name: str) -> Tensor:
        return self._params[name]

    def _heads(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        h = self.config.n_heads
        return transpose(reshape(x, (n, h, self.config.head_dim)), (1, 0, 2))

    def _attend(self, prefix: str, x: Tensor, context: Tensor, site: AttentionSite,
                hook: Optional[AttentionTransform]) -> Tensor:
        q = self._heads(matmul(x, self._p(f"{prefix}.q.weight")))
        k = self._heads(matmul(context, self._p(f"{prefix}.k.weight")))
        v = self._heads(matmul(context, self._p(f"{prefix}.v.weight")))
        logits = scale(matmul(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(self.config.head_dim))
        probs = softmax_lastdim(logits)
        if hook is not None:
            constrained = hook(site, probs)
            if constrained.shape != probs.shape:
                raise DimensionError(f"attention hook changed shape {probs.shape} -> {constrained.shape}")
            probs = constrained
        out = transpose(matmul(probs, v), (1, 0, 2))
        out = reshape(out, (x.shape[0], self.config.d_model))
        return matmul(out, self._p(f"{prefix}.o.weight"))

    def _norm_apply(self, name: str, x: Tensor) -> Tensor:
        return layer_norm(x, self._p(f"{name}.gain"), self._p(f"{name}.bias"))

    def _block(self, prefix: str, h: Tensor, context: Tensor, layer_index: int,
               hook: Optional[AttentionTransform]) -> Tensor:
        x = self._norm_apply(f"{prefix}.self.norm", h)
        h = add(h, self._attend(f"{prefix}.self", x, x, self._site(layer_index, AttentionKind.SELF), hook))
        x = self._norm_apply(f"{prefix}.cross.norm", h)
        h = add(h, self._attend(f"{prefix}.cross", x, context, self._site(layer_index, AttentionKind.CROSS), hook))
        x = self._norm_apply(f"{prefix}.mlp.norm", h)
        x = silu(add(matmul(x, self._p(f"{prefix}.mlp.fc1.weight")), self._p(f"{prefix}.mlp.fc1.bias")))
        x = add(matmul(x, self._p(f"{prefix}.mlp.fc2.weight")), self._p(f"{prefix}.mlp.fc2.bias"))
        return add(h, x)

    def _check_inputs(self, z_t, t: int, tokens: TokenizedPrompt) -> None:
        cfg = self.config
        expected = (cfg.channels, cfg.image_size, cfg.image_size)
        if tuple(z_t.shape) != expected:
            raise DimensionError(f"latent shape {tuple(z_t.shape)} != expected {expected}")
        if not 1 <= t <= cfg.T_train:
            raise ParameterError(f"timestep {t} outside [1, {cfg.T_train}]")
        if len(tokens.ids) != cfg.token_count:
            raise DimensionError(f"prompt has {len(tokens.ids)} tokens, model expects {cfg.token_count}")

    def forward_eps(self, z_t, t: int, tokens: TokenizedPrompt,
                    hook: Optional[AttentionTransform] = None) -> Tensor:
        """
        Predict the noise in z_t

        Args:
            z_t: noisy latent [C, H, W] (numpy array or Tensor)
            t: timestep in [1, T_train]
            tokens: tokenized prompt of length 1 + 2B
            hook: optional transform applied to every post-softmax attention map

        Returns:
            Tensor: noise prediction [C, H, W]
        """
        self._check_inputs(z_t, t, tokens)
        cfg = self.config
        hw = cfg.image_size * cfg.image_size
        z = as_tensor(z_t)

        pixels = transpose(reshape(z, (cfg.channels, hw)), (1, 0))
        h = add(matmul(pixels, self._p("in_proj.weight")), self._p("in_proj.bias"))
        h = add(h, self._p("pos_embed"))
        temb = Tensor(timestep_embedding(t, cfg.d_model).reshape(1, cfg.d_model))
        temb = silu(add(matmul(temb, self._p("time.weight")), self._p("time.bias")))
        h = add(h, reshape(temb, (cfg.d_model,)))

        context = add(embedding_lookup(self._p("token_embed"), tokens.ids), self._p("slot_embed"))

        middle_after = cfg.n_layers // 2
        for i in range(cfg.n_layers):
            if cfg.pooled_middle and i == middle_after:
                h = self._middle(h, context, hook)
            h = self._block(f"blocks.{i}", h, context, i, hook)

        out = self._norm_apply("out.norm", h)
        out = add(matmul(out, self._p("out.weight")), self._p("out.bias"))
        return reshape(transpose(out, (1, 0)), (cfg.channels, cfg.image_size, cfg.image_size))

    def _middle(self, h: Tensor, context: Tensor, hook: Optional[AttentionTransform]) -> Tensor:
        pooled = matmul(self._pool, h)
        updated = self._block(f"blocks.{MIDDLE}", pooled, context, self.config.n_layers, hook)
        return add(h, matmul(self._unpool, updated - pooled))

    def __call__(self, z_t, t: int, tokens: TokenizedPrompt,
                 hook: Optional[AttentionTransform] = None) -> Tensor:
        return self.forward_eps(z_t, t, tokens, hook)


def count_parameters(model: Denoiser) -> Tuple[int, int]:
    params = model.parameters()
    return len(params), sum(p.size for p in params.values())
