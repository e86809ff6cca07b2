"""Per-iteration training records and their CSV form."""

import csv
import logging
from dataclasses import astuple, dataclass, field
from pathlib import Path
from typing import List, Optional

from ..core.exceptions import DataIOError, FormatError

logger = logging.getLogger(__name__)

COLUMNS = ("iteration", "L_data", "L_jac", "L_total", "grad_norm", "wall_ms")


@dataclass(frozen=True)
class TrainRecord:
    iteration: int
    L_data: float
    L_jac: float
    L_total: float
    grad_norm: float
    wall_ms: float


@dataclass
class TrainLog:
    records: List[TrainRecord] = field(default_factory=list)
    skipped_windows: int = 0

    def append(self, record: TrainRecord) -> None:
        if self.records and record.iteration <= self.records[-1].iteration:
            previous = self.records[-1].iteration
            raise ValueError(
                f"iteration {record.iteration} does not follow {previous}"
            )
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final(self) -> Optional[TrainRecord]:
        return self.records[-1] if self.records else None

    def column(self, name: str) -> List[float]:
        return [getattr(r, name) for r in self.records]

    def write_csv(self, path) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f)
                writer.writerow(COLUMNS)
                for r in self.records:
                    iteration, *values = astuple(r)
                    writer.writerow([iteration] + [repr(float(v)) for v in values])
        except OSError as e:
            raise DataIOError(path, "cannot write training log", e) from e
        logger.info(f"Wrote {len(self)} log rows to {path}")
        return path

    @classmethod
    def read_csv(cls, path) -> "TrainLog":
        path = Path(path)
        try:
            with open(path, "r", newline="", encoding="utf-8") as f:
                rows = list(csv.reader(f))
        except OSError as e:
            raise DataIOError(path, "cannot read training log", e) from e
        if not rows or tuple(rows[0]) != COLUMNS:
            raise FormatError(path, "bad training log header")
        log = cls()
        for line_no, row in enumerate(rows[1:], start=2):
            try:
                log.append(TrainRecord(int(row[0]), *(float(v) for v in row[1:])))
            except (ValueError, TypeError, IndexError) as e:
                raise FormatError(path, f"row {line_no}: {e}")
        return log
