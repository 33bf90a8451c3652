"""
Expert layers
Channel-Adaptive Experts with the shared expert (the VA-MoE layer), plus the dense
and token-routed feed-forward layers used by the architecture ablation
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.errors import ExpansionError, IndexOutOfRangeError, UnknownGroupError
from src.tensor_core import Linear, MLP, Module, ModuleDict, ModuleList, Tensor, ops


@dataclass
class GateDecision:
    """Per-token routing: GateIndex (GI) and GateWeight (GW)"""
    indices: np.ndarray
    weights: Tensor
    probabilities: Tensor


class ChannelAdaptiveExpert(Module):
    """
    Expert for one variable group

    Routes the top-K latent channels, chosen by a gate conditioned on the group's
    index vector, through a K -> 2K -> K perceptron.
    """

    def __init__(self, width: int, k: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        if not 1 <= k <= width:
            raise IndexOutOfRangeError(f"selection width K={k} outside [1, {width}]")
        self.k = k
        self.gate_embed = MLP(width, width, width, rng, dtype=dtype)
        self.expert_net = MLP(k, 2 * k, k, rng, dtype=dtype)

    def gate(self, x, index_vector) -> GateDecision:
        logits = self.gate_embed(ops.mul(x, index_vector))
        probabilities = ops.softmax(logits)
        indices, weights = ops.topk(probabilities, self.k)
        return GateDecision(indices, weights, probabilities)

    def forward(self, x, index_vector, decisions: Optional[List[GateDecision]] = None) -> Tensor:
        decision = self.gate(x, index_vector)
        if decisions is not None:
            decisions.append(decision)
        selected = ops.gather_channels(x, decision.indices)
        return self.expert_net(ops.mul(decision.weights, selected))


def cae_gate(x, index_vector, cae: ChannelAdaptiveExpert) -> GateDecision:
    """Top-K routing of tokens (x ⊙ I_g -> GateEmbed -> SoftMax -> TopK)"""
    return cae.gate(x, index_vector)


def cae_forward(x, index_vector, cae: ChannelAdaptiveExpert) -> Tensor:
    """Expert output for the gated, weighted channel selection (tokens x K)"""
    return cae(x, index_vector)


class VaMoeLayer(Module):
    """Sum of per-group CAE outputs lifted by Linear_up, added to the shared expert"""

    def __init__(self, groups: Sequence[str], width: int, k: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.width = width
        self.k = k
        self.dtype = np.dtype(dtype)
        self.caes = ModuleDict({name: ChannelAdaptiveExpert(width, k, rng, dtype) for name in groups})
        self.shared = MLP(width, 2 * width, width, rng, dtype=dtype, zero_init_output=True)
        self.up_proj = Linear(k, width, rng, dtype=dtype, zero_init=True)

    def fuse(self, x, index_vectors: Dict[str, Tensor],
             decisions: Optional[Dict[str, GateDecision]] = None) -> Tensor:
        """X_fused: CAE outputs summed in group order"""
        fused = None
        for name, cae in self.caes.items():
            if name not in index_vectors:
                raise UnknownGroupError(f"no index vector for group {name!r}")
            trace: List[GateDecision] = []
            out = cae(x, index_vectors[name], trace)
            if decisions is not None:
                decisions[name] = trace[0]
            fused = out if fused is None else ops.add(fused, out)
        return fused

    def forward(self, x, index_vectors: Dict[str, Tensor],
                decisions: Optional[Dict[str, GateDecision]] = None) -> Tensor:
        return ops.add(self.shared(x), self.up_proj(self.fuse(x, index_vectors, decisions)))

    def add_expert(self, group: str, rng: np.random.Generator):
        if group in self.caes:
            raise ExpansionError(f"group {group!r} already has an expert")
        self.caes[group] = ChannelAdaptiveExpert(self.width, self.k, rng, self.dtype)


def vamoe_layer(x, layer: VaMoeLayer, index_vectors: Dict[str, Tensor]) -> Tensor:
    """Shared expert plus up-projected fused CAE features"""
    return layer(x, index_vectors)


class DenseFeedForward(Module):
    """Plain transformer MLP (the ViT ablation): the shared expert alone"""

    def __init__(self, width: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.shared = MLP(width, 2 * width, width, rng, dtype=dtype, zero_init_output=True)

    def forward(self, x, index_vectors=None, decisions=None) -> Tensor:
        return self.shared(x)


class TokenMoeLayer(Module):
    """Token-routed top-k mixture of dense experts (the ViT+MoE ablation)"""

    def __init__(self, width: int, experts: int, top_k: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        if not 1 <= top_k <= experts:
            raise IndexOutOfRangeError(f"top_k={top_k} outside [1, {experts}]")
        self.top_k = top_k
        self.router = Linear(width, experts, rng, dtype=dtype)
        self.experts = ModuleList([MLP(width, 2 * width, width, rng, dtype=dtype, zero_init_output=True)
                                   for _ in range(experts)])

    def forward(self, x, index_vectors=None, decisions=None) -> Tensor:
        probabilities = ops.softmax(self.router(x))
        indices, weights = ops.topk(probabilities, self.top_k)
        out = None
        for slot, expert in enumerate(self.experts):
            mask = Tensor((indices == slot).astype(weights.dtype))
            gate = ops.sum(ops.mul(weights, mask), axis=-1, keepdims=True)
            contribution = ops.mul(gate, expert(x))
            out = contribution if out is None else ops.add(out, contribution)
        return out
