"""
Dense float tensors with reverse-mode automatic differentiation.

A Tensor wraps a contiguous row-major numpy buffer. Every op that has an input
requiring grad records a TapeRecord on its output; ``backward`` rebuilds the
tape in topological order from the loss and walks it once in reverse.
Ops never mutate their inputs.
"""
from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import ContractError, DimensionError, NumericError


_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)
_dtype: contextvars.ContextVar[type] = contextvars.ContextVar("dtype", default=np.float32)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block"""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


@contextlib.contextmanager
def precision(dtype):
    """Select the float width of tensors created inside the block (float32 or float64)"""
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ContractError(f"Unsupported precision {dtype}")
    token = _dtype.set(dtype)
    try:
        yield
    finally:
        _dtype.reset(token)


def default_dtype() -> type:
    return _dtype.get()


def grad_enabled() -> bool:
    return _grad_enabled.get()


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


@dataclass(eq=False)
class TapeRecord:
    op: str
    inputs: Tuple["Tensor", ...]
    backward: BackwardFn


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_record", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=default_dtype())
        if any(d <= 0 for d in arr.shape):
            raise DimensionError(f"Tensor dimensions must be positive, got shape {arr.shape}")
        _check_finite(arr, "constructor")
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._record: Optional[TapeRecord] = None
        self.name = name

    @classmethod
    def _from_op(cls, op: str, arr: np.ndarray, inputs: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        _check_finite(arr, op)
        out = cls.__new__(cls)
        out.data = np.ascontiguousarray(arr).reshape(np.shape(arr))
        out.grad = None
        out.name = None
        out.requires_grad = grad_enabled() and any(t.requires_grad for t in inputs)
        out._record = TapeRecord(op, tuple(inputs), backward) if out.requires_grad else None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def reshape(self, *shape: int) -> "Tensor":
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes: int) -> "Tensor":
        return transpose(self, axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"Non-finite values produced by '{op}'")


def _broadcast_shape(op: str, a: Tuple[int, ...], b: Tuple[int, ...]) -> Tuple[int, ...]:
    # only leading batch dims may broadcast: the shorter shape must be a suffix of the longer
    longer, shorter = (a, b) if len(a) >= len(b) else (b, a)
    if longer[len(longer) - len(shorter):] != shorter:
        raise DimensionError(f"{op}: shapes {a} and {b} are not compatible")
    return longer


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


# -- elementwise ---------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op("add", a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("sub", a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op("sub", a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("mul", a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._from_op("mul", a.data * b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        return (g * c,)

    return Tensor._from_op("scale", a.data * c, (a,), backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)

    def backward(g):
        return (g * (s + a.data * s * (1.0 - s)),)

    return Tensor._from_op("silu", a.data * s, (a,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last dimension, then apply the learned gain and bias"""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain {gain.shape} / bias {bias.shape} must be ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        gxhat = g * gain.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._from_op("layer_norm", out, (x, gain, bias), backward)


def embedding_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    idx = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"embedding table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ContractError(f"embedding ids out of range [0, {table.shape[0]})")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return Tensor._from_op("embedding_lookup", table.data[idx], (table,), backward)


# -- reductions and losses -----------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        return (np.broadcast_to(g, x.shape).astype(x.data.dtype),)

    return Tensor._from_op("sum_all", np.asarray(x.data.sum()), (x,), backward)


def mean(x: Tensor) -> Tensor:
    n = x.size

    def backward(g):
        return (np.broadcast_to(g / n, x.shape).astype(x.data.dtype),)

    return Tensor._from_op("mean", np.asarray(x.data.mean()), (x,), backward)


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mse: shapes {a.shape} and {b.shape} differ")
    diff = a.data - b.data
    n = diff.size

    def backward(g):
        ga = (2.0 / n) * g * diff
        return ga, -ga

    return Tensor._from_op("mse", np.asarray((diff * diff).mean()), (a, b), backward)


# -- linear algebra and shape ops ----------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >= 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    _broadcast_shape("matmul", a.shape[:-2], b.shape[:-2])

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._from_op("matmul", np.matmul(a.data, b.data), (a, b), backward)


def softmax_lastdim(x: Tensor) -> Tensor:
    if x.ndim == 0 or x.data.size == 0:
        raise DimensionError(f"softmax needs a nonempty last dimension, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op("softmax", y, (x,), backward)


def normalize_lastdim(x: Tensor) -> Tensor:
    """Rescale every last-dimension slice to sum to 1; all-zero slices stay zero"""
    s = x.data.sum(axis=-1, keepdims=True)
    safe = np.where(s > 0, s, 1.0)
    y = np.where(s > 0, x.data / safe, 0.0).astype(x.data.dtype)

    def backward(g):
        gx = (g - (g * y).sum(axis=-1, keepdims=True)) / safe
        return (np.where(s > 0, gx, 0.0).astype(x.data.dtype),)

    return Tensor._from_op("normalize", y, (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from exc

    def backward(g):
        return (g.reshape(x.shape),)

    return Tensor._from_op("reshape", out, (x,), backward)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"invalid permutation {axes} for shape {x.shape}")
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return Tensor._from_op("transpose", np.transpose(x.data, axes), (x,), backward)


# -- backward ------------------------------------------------------------------

class Tape:
    """Recorded operations reachable from a loss, in topological order"""

    def __init__(self, entries: List[Tuple[Tensor, TapeRecord]]):
        self.entries = entries

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def from_loss(cls, loss: Tensor) -> "Tape":
        entries: List[Tuple[Tensor, TapeRecord]] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if node._record is None:
                continue
            if expanded:
                entries.append((node, node._record))
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._record.inputs):
                if parent._record is not None and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(entries)

    def run(self, loss: Tensor) -> None:
        pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node, record in reversed(self.entries):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            for inp, gi in zip(record.inputs, record.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                gi = np.asarray(gi, dtype=inp.data.dtype).reshape(inp.shape)
                if inp._record is None:
                    inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
                else:
                    prev = pending.get(id(inp))
                    pending[id(inp)] = gi if prev is None else prev + gi


def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> Tape:
    """
    Populate ``grad`` on every leaf ancestor of a scalar loss

    Args:
        loss: scalar tensor produced by recorded ops
        params: optional parameters; any not reached by the tape get zero grads

    Returns:
        Tape: the traversed tape
    """
    if loss.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    params = list(params) if params is not None else []
    if loss._record is None and not params:
        raise ContractError("loss was not recorded on a tape")
    tape = Tape.from_loss(loss)
    tape.run(loss)
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    return tape


def gradcheck(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-3) -> float:
    """
    Compare autodiff gradients with central finite differences

    Returns:
        float: the largest per-parameter relative error ||g_auto - g_fd|| / max(||g_auto||, ||g_fd||)
    """
    for p in params:
        p.zero_grad()
    backward(fn(), params)
    worst = 0.0
    for p in params:
        auto = p.grad.astype(np.float64)
        numeric = np.zeros_like(auto)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            with no_grad():
                up = fn().item()
            flat[i] = orig - h
            with no_grad():
                down = fn().item()
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2 * h)
        denom = max(np.linalg.norm(auto), np.linalg.norm(numeric), 1e-12)
        worst = max(worst, float(np.linalg.norm(auto - numeric) / denom))
    return worst


class Adam:
    """Adam over an ordered parameter list; updates replace each parameter's buffer"""

    def __init__(self, params: Sequence[Tensor], lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        bias1 = 1 - self.beta1 ** self.t
        bias2 = 1 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * p.grad
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * (p.grad * p.grad)
            m_hat = self.m[i] / bias1
            v_hat = self.v[i] / bias2
            updated = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            _check_finite(updated, "adam")
            p.data = updated.astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
