"""
Model package
Variable catalog, index embedding, experts, the VA-MoE forecaster and checkpoints
"""

from .catalog import VariableCatalog, VariableGroup, VariableKind, default_catalog, surface_groups, upper_air_groups
from .index_embedding import IndexEmbedding, project_index
from .experts import (ChannelAdaptiveExpert, DenseFeedForward, GateDecision, TokenMoeLayer, VaMoeLayer,
                      cae_forward, cae_gate, vamoe_layer)
from .layers import MultiHeadSelfAttention
from .network import ModelConfig, PatchDecoder, PatchEncoder, VaMoeBlock, VaMoeForecaster, block_forward, model_forward
from .checkpoint import (Checkpoint, ParameterRecord, load_checkpoint, load_parameters, parameter_table,
                         restore_model, save_checkpoint, snapshot)

__all__ = ['VariableCatalog', 'VariableGroup', 'VariableKind', 'default_catalog', 'surface_groups',
           'upper_air_groups', 'IndexEmbedding', 'project_index', 'ChannelAdaptiveExpert', 'DenseFeedForward',
           'GateDecision', 'TokenMoeLayer', 'VaMoeLayer', 'cae_forward', 'cae_gate', 'vamoe_layer',
           'MultiHeadSelfAttention', 'ModelConfig', 'PatchDecoder', 'PatchEncoder', 'VaMoeBlock',
           'VaMoeForecaster', 'block_forward', 'model_forward', 'Checkpoint', 'ParameterRecord',
           'load_checkpoint', 'load_parameters', 'parameter_table', 'restore_model', 'save_checkpoint',
           'snapshot']
