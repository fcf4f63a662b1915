"""
Binary PPM (P6) and PGM (P5) images with 8-bit samples
"""
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from app.core.errors import FormatError
from app.models.attention import ObjectMask

PathLike = Union[str, Path]


def encode_ppm(image: np.ndarray) -> bytes:
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise FormatError(f"PPM needs an H x W x 3 uint8 array, got {image.shape} {image.dtype}")
    h, w, _ = image.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(image).tobytes()


def encode_pgm(gray: np.ndarray) -> bytes:
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise FormatError(f"PGM needs an H x W uint8 array, got {gray.shape} {gray.dtype}")
    h, w = gray.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(gray).tobytes()


def _parse_header(data: bytes) -> Tuple[bytes, int, int, int, int]:
    """Return (magic, width, height, maxval, payload offset); '#' comments are skipped"""
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise FormatError("truncated header comment")
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated header")
        fields.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    pos += 1
    magic = fields[0]
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise FormatError(f"non-numeric header field: {exc}") from exc
    if width < 1 or height < 1:
        raise FormatError(f"invalid dimensions {width}x{height}")
    if not 0 < maxval <= 255:
        raise FormatError(f"only 8-bit samples are supported, maxval={maxval}")
    return magic, width, height, maxval, pos


def decode(data: bytes) -> np.ndarray:
    """Decode P6 to H x W x 3 or P5 to H x W, as uint8"""
    magic, width, height, _, offset = _parse_header(data)
    channels = {b"P6": 3, b"P5": 1}.get(magic)
    if channels is None:
        raise FormatError(f"unsupported magic {magic!r}")
    expected = width * height * channels
    payload = data[offset:offset + expected]
    if len(payload) != expected:
        raise FormatError(f"raster has {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=np.uint8)
    return arr.reshape(height, width, 3) if channels == 3 else arr.reshape(height, width)


def _read(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


def _write(path: PathLike, data: bytes) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(data)
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc


def read_ppm(path: PathLike) -> np.ndarray:
    image = decode(_read(path))
    if image.ndim != 3:
        raise FormatError(f"{path} is not a PPM image")
    return image


def read_pgm(path: PathLike) -> np.ndarray:
    gray = decode(_read(path))
    if gray.ndim != 2:
        raise FormatError(f"{path} is not a PGM image")
    return gray


def write_ppm(path: PathLike, image: np.ndarray) -> None:
    _write(path, encode_ppm(image))


def write_pgm(path: PathLike, gray: np.ndarray) -> None:
    _write(path, encode_pgm(gray))


def write_mask(path: PathLike, mask: ObjectMask) -> None:
    write_pgm(path, (mask.values * 255).astype(np.uint8))


def read_mask(path: PathLike) -> ObjectMask:
    return ObjectMask((read_pgm(path) > 127).astype(np.uint8))


def write_heatmap(path: PathLike, values: np.ndarray) -> None:
    """Scale a float map to the full 0..255 range and save it as PGM"""
    values = np.asarray(values, dtype=np.float64)
    peak = values.max()
    scaled = values / peak if peak > 0 else np.zeros_like(values)
    write_pgm(path, np.round(scaled * 255.0).astype(np.uint8))
