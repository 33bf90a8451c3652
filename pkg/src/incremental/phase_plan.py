"""
Phase plans
Which parameters train and which stay frozen in each training phase
"""

from dataclasses import dataclass
from enum import Enum
from fnmatch import fnmatchcase
from typing import Iterable, Set, Tuple

from loguru import logger

from config.settings import FREEZE_DECODER_OLD
from src.errors import FreezePlanError
from src.model.catalog import VariableCatalog
from src.model.checkpoint import parameter_table


class TrainingPhase(Enum):
    INITIAL = "initial"
    INCREMENTAL = "incremental"


@dataclass
class PhasePlan:
    """
    Trainable and frozen parameter-name patterns (fnmatch syntax)

    Every parameter must match exactly one side, and every pattern must match at
    least one parameter.
    """
    phase: TrainingPhase
    trainable_patterns: Tuple[str, ...]
    frozen_patterns: Tuple[str, ...] = ()
    old_channels: int = 0
    added_channels: int = 0
    description: str = ""

    def resolve(self, names: Iterable[str]) -> Tuple[Set[str], Set[str]]:
        names = list(names)
        trainable, frozen = set(), set()
        for name in names:
            in_trainable = any(fnmatchcase(name, p) for p in self.trainable_patterns)
            in_frozen = any(fnmatchcase(name, p) for p in self.frozen_patterns)
            if in_trainable and in_frozen:
                raise FreezePlanError(f"parameter {name} matches both trainable and frozen patterns")
            if not (in_trainable or in_frozen):
                raise FreezePlanError(f"parameter {name} is not covered by the {self.phase.value} plan")
            (trainable if in_trainable else frozen).add(name)
        for pattern in self.trainable_patterns + self.frozen_patterns:
            if not any(fnmatchcase(name, pattern) for name in names):
                raise FreezePlanError(f"plan pattern {pattern!r} matches no parameter")
        return trainable, frozen

    def is_frozen(self, name: str) -> bool:
        return any(fnmatchcase(name, p) for p in self.frozen_patterns)


def initial_plan() -> PhasePlan:
    """Everything trains"""
    return PhasePlan(TrainingPhase.INITIAL, ("*",), description="initial: all parameters trainable")


def incremental_plan(catalog: VariableCatalog, freeze_decoder_old: bool = FREEZE_DECODER_OLD) -> PhasePlan:
    """
    Freeze attention, norms, old experts, Linear_up and the pretrained encoder/decoder
    slices; train new experts, the shared expert, new kernel slices, the index
    projector and the loss weights
    """
    if not catalog.is_expanded:
        raise FreezePlanError("incremental plan needs an expanded catalog")
    new_groups = [g.name for g in catalog.incremental_groups]
    old_groups = [g.name for g in catalog.initial_groups]
    trainable = [f"blocks.*.moe.caes.{name}.*" for name in new_groups]
    trainable += ["blocks.*.moe.shared.*", "encoder.kernel.1", "decoder.kernel.1", "decoder.bias.1",
                  "index_embedding.projector.*", "loss.w"]
    frozen = [f"blocks.*.moe.caes.{name}.*" for name in old_groups]
    frozen += ["blocks.*.norm1.*", "blocks.*.norm2.*", "blocks.*.attention.*", "blocks.*.moe.up_proj.*",
               "encoder.kernel.0", "encoder.bias", "encoder.position"]
    decoder_old = ["decoder.kernel.0", "decoder.bias.0"]
    (frozen if freeze_decoder_old else trainable).extend(decoder_old)
    return PhasePlan(TrainingPhase.INCREMENTAL, tuple(trainable), tuple(frozen),
                     old_channels=catalog.n_initial, added_channels=catalog.n_incremental,
                     description="incremental: new experts, shared expert and new slices trainable")


def finetune_plan(catalog: VariableCatalog) -> PhasePlan:
    """Naive fine-tuning comparator: nothing frozen"""
    return PhasePlan(TrainingPhase.INCREMENTAL, ("*",), old_channels=catalog.n_initial,
                     added_channels=catalog.n_incremental, description="incremental: naive fine-tune")


def apply_freeze(model, plan: PhasePlan, loss_weights=None):
    """Set frozen flags of all model (and loss-weight) parameters per the plan"""
    table = parameter_table(model, loss_weights)
    trainable, frozen = plan.resolve(table)
    for name, param in table.items():
        param.frozen = name in frozen
        param.zero_grad()
    total = sum(p.size for p in table.values())
    active = sum(table[name].size for name in trainable)
    logger.info(f"Freeze plan applied ({plan.description or plan.phase.value}): "
                f"{len(trainable)} trainable / {len(frozen)} frozen tensors, "
                f"{active}/{total} values trainable ({active / max(total, 1):.3f})")
    return model


def trainable_ratio(model, loss_weights=None) -> float:
    table = parameter_table(model, loss_weights)
    total = sum(p.size for p in table.values())
    return sum(p.size for p in table.values() if not p.frozen) / max(total, 1)
