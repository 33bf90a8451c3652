"""
Variable catalog
Names, kinds, level counts and channel index ranges of the initial (N) and
incremental (M) variable groups
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import PRESSURE_LEVELS, SURFACE_VARIABLES, UPPER_AIR_VARIABLES
from src.errors import CatalogMismatchError, ExpansionError, UnknownChannelError, UnknownGroupError


class VariableKind(Enum):
    """Vertical structure of a variable group"""
    UPPER_AIR = "upper_air"
    SURFACE = "surface"


@dataclass(frozen=True)
class VariableGroup:
    """One variable type (upper-air, one channel per level) or a surface group"""
    name: str
    kind: VariableKind
    channels: Tuple[str, ...]

    @property
    def levels(self) -> int:
        return len(self.channels)

    def to_dict(self) -> Dict:
        return {"name": self.name, "kind": self.kind.value, "channels": list(self.channels)}

    @classmethod
    def from_dict(cls, payload: Dict) -> "VariableGroup":
        return cls(payload["name"], VariableKind(payload["kind"]), tuple(payload["channels"]))


class VariableCatalog:
    """
    Ordered variable groups with their channel ranges

    The first `initial_count` groups form the initial phase (N channels); the rest
    were added at the incremental phase (M channels). Channel ranges follow group
    order and cover [0, N + M) without overlap.
    """

    def __init__(self, groups: Sequence[VariableGroup], initial_count: Optional[int] = None):
        groups = tuple(groups)
        names = [g.name for g in groups]
        if len(set(names)) != len(names):
            raise CatalogMismatchError(f"duplicate group names in catalog: {names}")
        channels = [c for g in groups for c in g.channels]
        if len(set(channels)) != len(channels):
            raise CatalogMismatchError("duplicate channel names in catalog")
        if any(g.levels < 1 for g in groups):
            raise CatalogMismatchError("every group needs at least one channel")
        self.groups = groups
        self.initial_count = len(groups) if initial_count is None else initial_count
        self._ranges: Dict[str, range] = {}
        start = 0
        for group in groups:
            self._ranges[group.name] = range(start, start + group.levels)
            start += group.levels

    # ===== Sizes =====

    @property
    def initial_groups(self) -> Tuple[VariableGroup, ...]:
        return self.groups[:self.initial_count]

    @property
    def incremental_groups(self) -> Tuple[VariableGroup, ...]:
        return self.groups[self.initial_count:]

    @property
    def n_initial(self) -> int:
        """N"""
        return sum(g.levels for g in self.initial_groups)

    @property
    def n_incremental(self) -> int:
        """M"""
        return sum(g.levels for g in self.incremental_groups)

    @property
    def channel_count(self) -> int:
        return self.n_initial + self.n_incremental

    @property
    def is_expanded(self) -> bool:
        return self.n_incremental > 0

    @property
    def levels_initial(self) -> int:
        """l: levels per initial group"""
        return self.initial_groups[0].levels if self.initial_groups else 0

    @property
    def levels_incremental(self) -> int:
        """r: levels per incremental group"""
        return self.incremental_groups[0].levels if self.incremental_groups else 0

    # ===== Lookup =====

    @property
    def group_names(self) -> List[str]:
        return [g.name for g in self.groups]

    @property
    def channel_names(self) -> List[str]:
        return [c for g in self.groups for c in g.channels]

    def group(self, name: str) -> VariableGroup:
        for group in self.groups:
            if group.name == name:
                return group
        raise UnknownGroupError(f"unknown variable group {name!r}")

    def channel_range(self, name: str) -> range:
        if name not in self._ranges:
            raise UnknownGroupError(f"unknown variable group {name!r}")
        return self._ranges[name]

    def channel_index(self, channel: str) -> int:
        try:
            return self.channel_names.index(channel)
        except ValueError:
            raise UnknownChannelError(f"unknown channel {channel!r}") from None

    def channels_of_kind(self, kind: VariableKind) -> List[int]:
        return [i for g in self.groups if g.kind == kind for i in self._ranges[g.name]]

    # ===== Phase changes =====

    def extend(self, new_groups: Sequence[VariableGroup]) -> "VariableCatalog":
        """Catalog of the incremental phase; expansion is applied once only"""
        if self.is_expanded:
            raise ExpansionError("catalog already holds incremental groups")
        if not new_groups:
            raise ExpansionError("no new variable groups given")
        clash = set(self.group_names) & {g.name for g in new_groups}
        if clash:
            raise ExpansionError(f"groups already in catalog: {sorted(clash)}")
        return VariableCatalog(self.groups + tuple(new_groups), initial_count=self.initial_count)

    def initial_only(self) -> "VariableCatalog":
        return VariableCatalog(self.initial_groups)

    def onehot(self) -> np.ndarray:
        """One row-block per group, ones exactly in that group's channel columns"""
        matrix = np.zeros((len(self.groups), self.channel_count))
        for row, group in enumerate(self.groups):
            matrix[row, list(self._ranges[group.name])] = 1.0
        return matrix

    # ===== Serialisation =====

    def to_dict(self) -> Dict:
        return {"groups": [g.to_dict() for g in self.groups], "initial_count": self.initial_count}

    @classmethod
    def from_dict(cls, payload: Dict) -> "VariableCatalog":
        return cls([VariableGroup.from_dict(g) for g in payload["groups"]], payload["initial_count"])

    def __eq__(self, other) -> bool:
        return (isinstance(other, VariableCatalog) and self.groups == other.groups
                and self.initial_count == other.initial_count)

    def __repr__(self) -> str:
        return f"VariableCatalog(groups={self.group_names}, N={self.n_initial}, M={self.n_incremental})"


# ===== Default catalogs =====

def select_levels(count: int) -> List[int]:
    """`count` pressure levels spread evenly over the full 13-level set"""
    if not 1 <= count <= len(PRESSURE_LEVELS):
        raise CatalogMismatchError(f"level count {count} outside [1, {len(PRESSURE_LEVELS)}]")
    picks = np.linspace(0, len(PRESSURE_LEVELS) - 1, count).round().astype(int)
    return [PRESSURE_LEVELS[i] for i in picks]


def upper_air_groups(levels: int) -> List[VariableGroup]:
    pressures = select_levels(levels)
    return [VariableGroup(name, VariableKind.UPPER_AIR, tuple(f"{name.lower()}{p}" for p in pressures))
            for name in UPPER_AIR_VARIABLES]


def surface_groups(grouping: str = "single") -> List[VariableGroup]:
    """Surface variables as one SV group ("single") or one group per variable ("per_variable")"""
    if grouping == "single":
        return [VariableGroup("SV", VariableKind.SURFACE, tuple(SURFACE_VARIABLES))]
    if grouping == "per_variable":
        return [VariableGroup(name.upper(), VariableKind.SURFACE, (name,)) for name in SURFACE_VARIABLES]
    raise CatalogMismatchError(f"unknown surface grouping {grouping!r}")


def default_catalog(levels: int = 3) -> VariableCatalog:
    """Initial-phase catalog: Z, Q, U, V, T with `levels` pressure levels each"""
    return VariableCatalog(upper_air_groups(levels))
