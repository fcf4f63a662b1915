"""
Dataset manifest and diagnostics as JSON Lines
"""
import json
from pathlib import Path
from typing import Iterable, List, Union

from pydantic import BaseModel, ValidationError

from app.core.errors import FormatError
from app.models.scene import Keypoint, SceneSpec

PathLike = Union[str, Path]

MANIFEST_NAME = "manifest.jsonl"


class ManifestEntry(BaseModel):
    seed: int
    spec: SceneSpec
    image_path: str
    mask_path: str
    keypoints: List[Keypoint]
    p_src: str
    p_edit: str


def write_jsonl(path: PathLike, rows: Iterable[BaseModel]) -> int:
    lines = [row.model_dump_json() for row in rows]
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc
    return len(lines)


def write_manifest(path: PathLike, entries: Iterable[ManifestEntry]) -> int:
    return write_jsonl(path, entries)


def read_manifest(path: PathLike) -> List[ManifestEntry]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from exc
    entries = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entries.append(ManifestEntry.model_validate(json.loads(line)))
        except (ValueError, ValidationError) as exc:
            raise FormatError(f"{path}:{number}: invalid manifest line: {exc}") from exc
    if not entries:
        raise FormatError(f"manifest {path} is empty")
    return entries


def resolve(manifest_path: PathLike, relative: str) -> Path:
    """Manifest paths are relative to the manifest's directory"""
    return Path(manifest_path).parent / relative
