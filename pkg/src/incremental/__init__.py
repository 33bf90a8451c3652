"""
Incremental package
Model expansion for new variables, phase freeze plans and preservation checks
"""

from .expansion import add_surface_experts, expand_encoder, expand_index_embedding, expand_model
from .phase_plan import (PhasePlan, TrainingPhase, apply_freeze, finetune_plan, incremental_plan, initial_plan,
                         trainable_ratio)
from .preservation import PreservationEntry, PreservationReport, verify_preservation

__all__ = ['add_surface_experts', 'expand_encoder', 'expand_index_embedding', 'expand_model', 'PhasePlan',
           'TrainingPhase', 'apply_freeze', 'finetune_plan', 'incremental_plan', 'initial_plan',
           'trainable_ratio', 'PreservationEntry', 'PreservationReport', 'verify_preservation']
