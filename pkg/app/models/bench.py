"""
Benchmark records and report
"""
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel

from app.models.attention import ConstraintMode


SCHEMA_VERSION = 1
UNSUPPORTED = "unsupported"


class SampleStatus(str, Enum):
    OK = "ok"
    FAILED = "failed"
    EXCLUDED = "excluded"


class BenchRecord(BaseModel):
    scene_id: int
    mode: ConstraintMode
    shape: str
    prompt: str
    status: SampleStatus = SampleStatus.OK
    miou: Optional[float] = None
    pck: Optional[float] = None
    kw_miou: Optional[float] = None
    error: Optional[str] = None


class ModeAggregate(BaseModel):
    mode: ConstraintMode
    samples: int
    failed: int
    excluded: int
    miou: Optional[float] = None
    pck: Optional[float] = None
    kw_miou: Optional[float] = None
    fid: str = UNSUPPORTED
    clip: str = UNSUPPORTED


class BenchReport(BaseModel):
    schema_version: int = SCHEMA_VERSION
    records: List[BenchRecord]
    aggregates: List[ModeAggregate]
    config: Dict[str, Any] = {}

    def aggregate(self, mode: ConstraintMode) -> ModeAggregate:
        for row in self.aggregates:
            if row.mode == mode:
                return row
        raise KeyError(mode)
