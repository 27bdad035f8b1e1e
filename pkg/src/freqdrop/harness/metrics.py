"""Metric records and their CSV form."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import astuple, dataclass, fields
from pathlib import Path

from ..errors import DataError

HEADER = ("run_id", "method", "seed", "phase", "corruption", "severity", "epoch", "accuracy", "loss")
PHASES = ("train", "val", "test", "corrupt")
CLEAN = "none"


@dataclass(frozen=True)
class MetricsRecord:
    run_id: str
    method: str
    seed: int
    phase: str
    corruption: str
    severity: int
    epoch: int
    accuracy: float
    loss: float

    def __post_init__(self):
        if self.phase not in PHASES:
            raise DataError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if not 0.0 <= self.accuracy <= 1.0:
            raise DataError(f"accuracy {self.accuracy} outside [0, 1]")
        if self.phase != "corrupt" and self.severity != 0:
            raise DataError("severity must be 0 unless phase is 'corrupt'")
        if self.phase == "corrupt" and (self.corruption == CLEAN or self.severity < 1):
            raise DataError("corrupt records need a corruption kind and severity >= 1")
        if self.phase != "corrupt" and self.corruption != CLEAN:
            raise DataError(f"only corrupt records carry a corruption kind, got {self.corruption!r}")
        if self.epoch < 0:
            raise DataError("epoch must be non-negative")
        if math.isnan(self.loss):
            raise DataError("loss is NaN")

    @property
    def cell(self) -> tuple[str, str, int]:
        return self.phase, self.corruption, self.severity


def _fmt(value):
    # repr keeps floats exact through a write/read cycle
    return repr(value) if isinstance(value, float) else str(value)


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in records:
        w.writerow([_fmt(v) for v in astuple(r)])
    return buf.getvalue()


def records_from_csv(text: str) -> list[MetricsRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != HEADER:
        raise DataError(f"metrics CSV must start with header {','.join(HEADER)}")
    types = [f.type for f in fields(MetricsRecord)]
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(HEADER):
            raise DataError(f"metrics CSV line {lineno}: expected {len(HEADER)} fields, got {len(row)}")
        try:
            values = [int(v) if t == "int" else float(v) if t == "float" else v for v, t in zip(row, types)]
        except ValueError as e:
            raise DataError(f"metrics CSV line {lineno}: {e}") from None
        out.append(MetricsRecord(*values))
    return out


def write_records(path, records) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(records_to_csv(records))
    return path


def read_records(path) -> list[MetricsRecord]:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise DataError(f"cannot read metrics file {path}: {e.strerror}") from None
    return records_from_csv(text)
