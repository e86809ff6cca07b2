import csv
import json
import logging
import math
import re
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from ..core.exceptions import DataIOError, FormatError

logger = logging.getLogger(__name__)

MODE_ORDER = ("lfi", "vanilla", "narx")
COMPARISON_COLUMNS = (
    "mode",
    "seeds",
    "trajectory_rmse",
    "eigenvalue_mae",
    "final_train_loss",
    "train_wall_ms",
)


def json_safe(value):
    """Replace non-finite floats with None so the output stays strict JSON."""
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.ndarray):
        return json_safe(value.tolist())
    return value


def _median(values: List[Optional[float]]) -> Optional[float]:
    finite = [v for v in values if v is not None and math.isfinite(v)]
    return float(np.median(finite)) if finite else None


class ReportManager:
    """File-based store of evaluation reports and the mode comparison table"""

    EVAL_PATTERN = re.compile(r"^eval_(?P<mode>[a-z]+)_seed(?P<seed>-?\d+)\.json$")

    def __init__(self, report_dir):
        """Point the manager at a report directory (created on first write)"""
        self.report_dir = Path(report_dir).expanduser()

    def _ensure_directory(self) -> None:
        try:
            self.report_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise DataIOError(
                self.report_dir, "cannot create report directory", e
            ) from e

    def eval_path(self, mode: str, seed: int) -> Path:
        return self.report_dir / f"eval_{mode}_seed{seed}.json"

    def artifact_dir(self, mode: str, seed: int) -> Path:
        """Directory for the trajectory CSVs of one evaluation"""
        return self.report_dir / f"eval_{mode}_seed{seed}"

    def save_eval(self, report: Dict[str, Any]) -> Path:
        """
        Write one evaluation report

        Args:
            report: Report dictionary carrying at least ``mode`` and ``seed``

        Returns:
            Path of the written JSON file
        """
        self._ensure_directory()
        path = self.eval_path(report["mode"], report["seed"])
        try:
            with open(path, "w", encoding="utf-8") as f:
                json.dump(json_safe(report), f, indent=2, sort_keys=True)
        except OSError as e:
            raise DataIOError(path, "cannot write evaluation report", e) from e
        logger.info(f"Saved evaluation report {path}")
        return path

    def load_eval(self, path) -> Dict[str, Any]:
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(path, f"invalid JSON: {e}") from e
        except OSError as e:
            raise DataIOError(path, "cannot read evaluation report", e) from e

    def list_evals(self, mode: Optional[str] = None) -> List[Dict[str, Any]]:
        """
        All stored evaluation reports, ordered by file name

        Args:
            mode: Optional training mode to filter by
        """
        if not self.report_dir.is_dir():
            return []
        reports = []
        for path in sorted(self.report_dir.iterdir()):
            match = self.EVAL_PATTERN.match(path.name)
            if not match or (mode and match.group("mode") != mode):
                continue
            reports.append(self.load_eval(path))
        return reports

    def comparison(self) -> List[Dict[str, Any]]:
        """One row per mode: medians over seeds of each headline figure"""
        by_mode: Dict[str, List[Dict[str, Any]]] = {}
        for report in self.list_evals():
            by_mode.setdefault(report["mode"], []).append(report)

        def order(mode: str):
            rank = MODE_ORDER.index(mode) if mode in MODE_ORDER else len(MODE_ORDER)
            return (rank, mode)

        rows = []
        for mode in sorted(by_mode, key=order):
            reports = by_mode[mode]
            rows.append(
                {
                    "mode": mode,
                    "seeds": len(reports),
                    "trajectory_rmse": _median(
                        [r["summary"].get("rmse_normalized") for r in reports]
                    ),
                    "eigenvalue_mae": _median(
                        [r["summary"].get("eig_mae") for r in reports]
                    ),
                    "final_train_loss": _median(
                        [r["train"].get("final_L_total") for r in reports]
                    ),
                    "train_wall_ms": _median(
                        [r["train"].get("wall_ms") for r in reports]
                    ),
                }
            )
        return rows

    def write_comparison(self, rows: List[Dict[str, Any]]) -> Dict[str, Path]:
        """Write comparison.csv and comparison.json next to the reports"""
        self._ensure_directory()
        csv_path = self.report_dir / "comparison.csv"
        json_path = self.report_dir / "comparison.json"
        try:
            with open(csv_path, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f)
                writer.writerow(COMPARISON_COLUMNS)
                for row in rows:
                    writer.writerow(
                        ["" if row[c] is None else row[c] for c in COMPARISON_COLUMNS]
                    )
            with open(json_path, "w", encoding="utf-8") as f:
                json.dump({"rows": json_safe(rows)}, f, indent=2, sort_keys=True)
        except OSError as e:
            raise DataIOError(
                self.report_dir, "cannot write comparison table", e
            ) from e
        logger.info(f"Wrote comparison of {len(rows)} modes to {csv_path}")
        return {"csv": csv_path, "json": json_path}
