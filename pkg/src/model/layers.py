"""
Attention layer
"""

import math

import numpy as np

from src.errors import ShapeError
from src.tensor_core import Linear, Module, Tensor, ops


class MultiHeadSelfAttention(Module):
    """Standard multi-head self-attention over the token axis of [B, T, C]"""

    def __init__(self, width: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        if heads < 1 or width % heads:
            raise ShapeError(f"latent width {width} is not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = width // heads
        self.query = Linear(width, width, rng, dtype=dtype)
        self.key = Linear(width, width, rng, dtype=dtype)
        self.value = Linear(width, width, rng, dtype=dtype)
        self.out = Linear(width, width, rng, dtype=dtype, zero_init=True)

    def _split(self, x: Tensor, batch: int, tokens: int) -> Tensor:
        return ops.transpose(ops.reshape(x, (batch, tokens, self.heads, self.head_dim)), (0, 2, 1, 3))

    def forward(self, x) -> Tensor:
        batch, tokens, width = x.shape
        q = self._split(self.query(x), batch, tokens)
        k = self._split(self.key(x), batch, tokens)
        v = self._split(self.value(x), batch, tokens)
        scores = ops.mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(self.head_dim))
        context = ops.matmul(ops.softmax(scores), v)
        merged = ops.reshape(ops.transpose(context, (0, 2, 1, 3)), (batch, tokens, width))
        return self.out(merged)
