"""
Index embedding
Fixed one-hot group identifiers projected to latent width by the Index Encoder
"""

from typing import Dict

import numpy as np

from src.errors import ExpansionError, UnknownGroupError
from src.model.catalog import VariableCatalog
from src.tensor_core import Linear, Module, Parameter, Tensor, ops, trunc_normal


class IndexEmbedding(Module):
    """One-hot matrix I_h (groups x channels) and its learned projection to width C"""

    def __init__(self, catalog: VariableCatalog, width: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.width = width
        self.dtype = np.dtype(dtype)
        self.catalog = catalog
        self.onehot = catalog.onehot().astype(self.dtype)
        self.onehot.setflags(write=False)
        self.projector = Linear(catalog.channel_count, width, rng, dtype=dtype)

    def project(self, group: str) -> Tensor:
        """Latent index vector I_g of shape (1, 1, C)"""
        if group not in self.catalog.group_names:
            raise UnknownGroupError(f"unknown variable group {group!r}")
        row = self.catalog.group_names.index(group)
        latent = self.projector(Tensor(self.onehot[row:row + 1]))
        return ops.reshape(latent, (1, 1, self.width))

    def project_all(self) -> Dict[str, Tensor]:
        return {name: self.project(name) for name in self.catalog.group_names}

    def expand(self, catalog: VariableCatalog, rng: np.random.Generator, reinit: bool = True):
        """
        Grow to an extended catalog

        The one-hot matrix gains one row-block per new group and one column per new
        channel. With `reinit` the projector is drawn afresh; otherwise the rows of
        old channels are kept and only the new channels' rows are initialised.
        """
        old = self.catalog
        if catalog.groups[:len(old.groups)] != old.groups or catalog.channel_count <= old.channel_count:
            raise ExpansionError("index embedding can only grow by appending new groups")
        self.catalog = catalog
        self.onehot = catalog.onehot().astype(self.dtype)
        self.onehot.setflags(write=False)
        if reinit:
            self.projector = Linear(catalog.channel_count, self.width, rng, dtype=self.dtype)
            return
        added = catalog.channel_count - old.channel_count
        weight = np.concatenate([self.projector.weight.data,
                                 trunc_normal((added, self.width), rng, dtype=self.dtype)], axis=0)
        bias = self.projector.bias.data.copy()
        projector = Linear(catalog.channel_count, self.width, rng, dtype=self.dtype)
        projector.weight = Parameter(weight, dtype=self.dtype)
        projector.bias = Parameter(bias, decay=False, dtype=self.dtype)
        self.projector = projector


def project_index(embedding: IndexEmbedding, group: str) -> Tensor:
    """Latent index vector (1 x 1 x C) of one variable group"""
    return embedding.project(group)
