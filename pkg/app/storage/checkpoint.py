"""
Checkpoint container.

Layout (little endian): magic b"SGDM", u32 format version, u32 tensor count,
then per tensor: u16 name length, UTF-8 name, u8 ndim, u32 per dim, f32 payload.
The same container stores inversion trajectories as tensors z_000 .. z_S.
"""
import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Mapping, Tuple, Union

import numpy as np

from app.core.errors import CheckpointError
from app.models.edit import InversionTrajectory
from app.models.prompt import Vocabulary
from app.models.run_config import RunConfig

MAGIC = b"SGDM"
FORMAT_VERSION = 1

PathLike = Union[str, Path]


def encode_checkpoint(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(tensors))]
    for name, value in tensors.items():
        raw_name = name.encode("utf-8")
        arr = np.asarray(value)
        if len(raw_name) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise CheckpointError(f"{name}: too many dimensions ({arr.ndim})")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> "OrderedDict[str, np.ndarray]":
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise CheckpointError("bad magic, not a checkpoint file")
    version, count = reader.unpack("<II")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        try:
            name = reader.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError("tensor name is not valid UTF-8") from exc
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        payload = reader.take(4 * size)
        tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)
    if reader.pos != len(data):
        raise CheckpointError(f"{len(data) - reader.pos} trailing bytes after the last tensor")
    return tensors


def save_checkpoint(path: PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(encode_checkpoint(tensors))
    except OSError as exc:
        raise CheckpointError(f"cannot write {path}: {exc}") from exc


def load_checkpoint(path: PathLike) -> "OrderedDict[str, np.ndarray]":
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    return decode_checkpoint(data)


def sidecar_path(path: PathLike) -> Path:
    return Path(f"{path}.json")


def save_sidecar(path: PathLike, config: RunConfig, vocab: Vocabulary) -> None:
    document = {"config": config.echo(), "vocabulary": json.loads(vocab.to_json())}
    sidecar_path(path).write_text(json.dumps(document, indent=2, sort_keys=True), encoding="utf-8")


def load_sidecar(path: PathLike) -> Tuple[RunConfig, Vocabulary]:
    target = sidecar_path(path)
    try:
        document = json.loads(target.read_text(encoding="utf-8"))
        config = RunConfig.model_validate(document["config"])
        vocab = Vocabulary.from_json(json.dumps(document["vocabulary"]))
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot load checkpoint sidecar {target}: {exc}") from exc
    return config, vocab


def trajectory_tensors(trajectory: InversionTrajectory) -> Dict[str, np.ndarray]:
    width = max(3, len(str(trajectory.steps)))
    return OrderedDict((f"z_{k:0{width}d}", z) for k, z in enumerate(trajectory.latents))


def save_trajectory(path: PathLike, trajectory: InversionTrajectory) -> None:
    save_checkpoint(path, trajectory_tensors(trajectory))
