"""
Preservation check
Compares two checkpoints of one model lineage: frozen parameters must be
bit-identical, trainable ones are expected to have moved
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from loguru import logger

from src.errors import ManifestMismatchError, PreservationViolationError
from src.incremental.phase_plan import PhasePlan
from src.model.checkpoint import Checkpoint


@dataclass
class PreservationEntry:
    name: str
    frozen: bool
    max_abs_diff: float
    changed: bool


@dataclass
class PreservationReport:
    """Per-parameter differences between two checkpoints"""
    entries: List[PreservationEntry]
    added: List[str] = field(default_factory=list)

    @property
    def violations(self) -> List[PreservationEntry]:
        return [e for e in self.entries if e.frozen and e.changed]

    @property
    def unchanged_trainable(self) -> List[PreservationEntry]:
        return [e for e in self.entries if not e.frozen and not e.changed]

    @property
    def clean(self) -> bool:
        return not self.violations

    def check(self):
        """Raise PreservationViolationError when a frozen parameter moved"""
        if self.violations:
            worst = max(self.violations, key=lambda e: e.max_abs_diff)
            raise PreservationViolationError(
                f"{len(self.violations)} frozen parameters changed; worst {worst.name} "
                f"(max abs diff {worst.max_abs_diff:.3e})")

    def to_table(self) -> str:
        width = max([len(e.name) for e in self.entries] + [9])
        lines = [f"{'parameter':<{width}}  {'state':<9}  {'max_abs_diff':>12}  changed  status"]
        for e in self.entries:
            status = "VIOLATION" if e.frozen and e.changed else "ok"
            lines.append(f"{e.name:<{width}}  {'frozen' if e.frozen else 'trainable':<9}  "
                         f"{e.max_abs_diff:>12.4e}  {str(e.changed).lower():<7}  {status}")
        for name in self.added:
            lines.append(f"{name:<{width}}  {'added':<9}  {'-':>12}  {'-':<7}  ok")
        lines.append(f"violations: {len(self.violations)}")
        return "\n".join(lines) + "\n"

    def to_key_values(self) -> str:
        lines = [f"{e.name} = {e.max_abs_diff!r} {str(e.changed).lower()}" for e in self.entries]
        lines.append(f"violations = {len(self.violations)}")
        return "\n".join(lines) + "\n"

    def write(self, directory) -> Tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        table = directory / "preservation_report.txt"
        values = directory / "preservation_report.kv"
        table.write_text(self.to_table())
        values.write_text(self.to_key_values())
        logger.info(f"Preservation report written: {table}")
        return table, values


def _compare(name: str, before: np.ndarray, after: np.ndarray, frozen: bool) -> PreservationEntry:
    if before.shape != after.shape:
        if frozen:
            raise ManifestMismatchError(f"frozen parameter {name} changed shape {before.shape} -> {after.shape}")
        return PreservationEntry(name, frozen, float("inf"), True)
    changed = not np.array_equal(before, after)
    diff = float(np.max(np.abs(before.astype(np.float64) - after.astype(np.float64)))) if before.size else 0.0
    return PreservationEntry(name, frozen, diff, changed)


def verify_preservation(before: Checkpoint, after: Checkpoint, plan: PhasePlan,
                        workers: Optional[int] = None) -> PreservationReport:
    """
    Compare every parameter present in both checkpoints

    Parameters that exist only in `after` (created by expansion) are listed as added.
    A parameter of `before` missing from `after` is a manifest mismatch.
    """
    missing = [name for name in before.records if name not in after.records]
    if missing:
        raise ManifestMismatchError(f"parameters missing from the later checkpoint: {missing[:5]}")
    _, frozen = plan.resolve(after.records)
    names = [name for name in after.records if name in before.records]
    added = [name for name in after.records if name not in before.records]
    bad = [name for name in added if name in frozen]
    if bad:
        raise ManifestMismatchError(f"parameters absent from the earlier checkpoint are frozen: {bad[:5]}")

    with ThreadPoolExecutor(max_workers=workers) as pool:
        entries = list(pool.map(lambda n: _compare(n, before.array(n), after.array(n), n in frozen), names))

    report = PreservationReport(entries, added)
    for entry in report.unchanged_trainable:
        logger.warning(f"Trainable parameter {entry.name} did not change")
    logger.info(f"Preservation check: {len(entries)} compared, {len(added)} added, "
                f"{len(report.violations)} violations")
    return report
