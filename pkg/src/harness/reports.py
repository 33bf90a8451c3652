"""
Metrics and report files
Append-only metrics log written as CSV, plus plain-text tables
"""

import csv
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

from loguru import logger

from src.harness.evaluation import EvaluationReport

METRICS_COLUMNS = ["phase", "epoch", "lead", "channel", "rmse", "loss_pred", "loss_recon", "trainable_params"]


@dataclass(frozen=True)
class MetricsRecord:
    phase: str
    epoch: int
    lead: int
    channel: str
    rmse: float
    loss_pred: float
    loss_recon: float
    trainable_params: int


def metrics_rows(report: EvaluationReport, phase: str, epoch: int, loss_pred: float, loss_recon: float,
                 trainable_params: int) -> List[MetricsRecord]:
    """One row per lead and channel"""
    return [MetricsRecord(phase, epoch, lead, name, float(report.model_rmse[lead][c]), float(loss_pred),
                          float(loss_recon), int(trainable_params))
            for lead in report.leads for c, name in enumerate(report.channel_names)]


class MetricsLog:
    """Rows are only ever appended"""

    def __init__(self):
        self._rows: List[MetricsRecord] = []

    def extend(self, rows: Iterable[MetricsRecord]):
        self._rows.extend(rows)

    @property
    def rows(self) -> List[MetricsRecord]:
        return list(self._rows)

    def __len__(self) -> int:
        return len(self._rows)

    def write_csv(self, path) -> Path:
        return write_csv(path, METRICS_COLUMNS, [asdict(r) for r in self._rows])


def write_csv(path, columns: Sequence[str], rows: Iterable[Dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format(v) for k, v in row.items()})
    logger.info(f"CSV written: {path}")
    return path


def read_metrics_csv(path) -> List[MetricsRecord]:
    types = {f.name: f.type for f in fields(MetricsRecord)}
    with open(path, newline="") as handle:
        return [MetricsRecord(**{k: types[k](v) for k, v in row.items()}) for row in csv.DictReader(handle)]


def _format(value):
    if isinstance(value, float):
        return repr(float(value))
    return value


def format_table(columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Left-aligned fixed-width text table"""
    cells = [[str(c) for c in columns]] + [[_cell(v) for v in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = ["  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * width for width in widths))
    return "\n".join(lines) + "\n"


def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.5g}"
    return str(value)


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    logger.info(f"Report written: {path}")
    return path
