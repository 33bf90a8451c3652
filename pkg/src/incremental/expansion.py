"""
Model expansion
Grows a trained initial-phase model to accept M new variables: new encoder and
decoder kernel slices, an extended index embedding and one new expert per group
"""

from typing import Optional, Sequence

import numpy as np
from loguru import logger

from config.settings import REINIT_INDEX_PROJECTOR
from src.errors import ExpansionError
from src.losses.objectives import DynamicLossWeights
from src.model.catalog import VariableGroup
from src.model.experts import VaMoeLayer
from src.model.network import VaMoeForecaster

# Salts keep the random streams of the expansion steps independent of each other
_ENCODER_SALT = 1
_INDEX_SALT = 2
_EXPERT_SALT = 3


def _rng(seed: int, salt: int) -> np.random.Generator:
    return np.random.default_rng([seed, salt])


def _require_vamoe(model: VaMoeForecaster):
    if model.config.architecture != "vamoe":
        raise ExpansionError(f"incremental expansion needs the vamoe architecture, "
                             f"model is {model.config.architecture}")


def expand_encoder(model: VaMoeForecaster, m: int, seed: int = 0) -> VaMoeForecaster:
    """
    Widen encoder input from N to N+M channels and the decoder output symmetrically

    The pretrained slices stay as they are (bit-identical); the new (3,3,M,C) encoder
    slice and (3,3,C,M) decoder slice are drawn fresh, new decoder biases start at zero.
    """
    _require_vamoe(model)
    if m <= 0:
        raise ExpansionError(f"number of new channels must be positive, got {m}")
    if len(model.encoder.kernel) > 1 or model.catalog.is_expanded:
        raise ExpansionError("model is already expanded")
    rng = _rng(seed, _ENCODER_SALT)
    old = model.channel_count
    model.encoder.add_channels(m, rng)
    model.decoder.add_channels(m, rng)
    model.assign_names()
    logger.info(f"Encoder expanded {old} -> {model.channel_count} channels; decoder expanded symmetrically")
    return model


def expand_index_embedding(model: VaMoeForecaster, new_groups: Sequence[VariableGroup], seed: int = 0,
                           reinit: bool = REINIT_INDEX_PROJECTOR) -> VaMoeForecaster:
    """Extend the catalog and grow the one-hot matrix by one row-block per new group"""
    _require_vamoe(model)
    catalog = model.catalog.extend(new_groups)
    model.index_embedding.expand(catalog, _rng(seed, _INDEX_SALT), reinit=reinit)
    model.catalog = catalog
    model.assign_names()
    mode = "re-initialised" if reinit else "warm-started"
    logger.info(f"Index embedding expanded to {len(catalog.groups)} groups ({mode} projector)")
    return model


def add_surface_experts(model: VaMoeForecaster, new_groups: Sequence[VariableGroup],
                        seed: int = 0) -> VaMoeForecaster:
    """One fresh ChannelAdaptiveExpert per new group in every block"""
    _require_vamoe(model)
    if len(model.encoder.kernel) < 2:
        raise ExpansionError("expand the encoder before adding experts")
    rng = _rng(seed, _EXPERT_SALT)
    for block in model.blocks:
        layer: VaMoeLayer = block.moe
        for group in new_groups:
            layer.add_expert(group.name, rng)
    model.assign_names()
    logger.info(f"Added experts for {[g.name for g in new_groups]} to {len(model.blocks)} blocks")
    return model


def expand_model(model: VaMoeForecaster, new_groups: Sequence[VariableGroup], seed: int = 0,
                 reinit_index_projector: bool = REINIT_INDEX_PROJECTOR,
                 loss_weights: Optional[DynamicLossWeights] = None) -> VaMoeForecaster:
    """Full expansion: encoder/decoder, index embedding, experts (and loss weights)"""
    if not new_groups:
        raise ExpansionError("no new variable groups given")
    _require_vamoe(model)
    model.catalog.extend(new_groups)
    m = sum(g.levels for g in new_groups)
    expand_encoder(model, m, seed)
    expand_index_embedding(model, new_groups, seed, reinit=reinit_index_projector)
    add_surface_experts(model, new_groups, seed)
    if loss_weights is not None:
        loss_weights.expand(m)
    return model
