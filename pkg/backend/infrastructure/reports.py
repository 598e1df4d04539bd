"""
Loss-curve CSV files and JSON reports.
"""
import csv
import json
from pathlib import Path
from typing import Any, List, Mapping, Sequence

from backend.domain.models import LossRecord

CURVE_COLUMNS = ("epoch", "split", "task", "value")


def save_curves(path: Path, curves: Sequence[LossRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_COLUMNS)
        for record in curves:
            writer.writerow([record.epoch, record.split, record.task, repr(float(record.value))])


def load_curves(path: Path) -> List[LossRecord]:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        return [
            LossRecord(epoch=int(row["epoch"]), split=row["split"], task=row["task"], value=float(row["value"]))
            for row in csv.DictReader(fh)
        ]


def save_json(path: Path, payload: Mapping[str, Any]) -> None:
    """Sorted keys and a trailing newline so equal payloads give identical bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
