"""
VA-MoE forecaster
Patch encoder, stack of attention + expert blocks, and patch decoder mapping the
atmospheric state at t to the state at t + 1
"""

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from config.settings import (ARCHITECTURE, ATTENTION_HEADS, AVAILABLE_ARCHITECTURES, DEPTH, GRID_HEIGHT,
                             GRID_WIDTH, LATENT_WIDTH, LAYER_NORM_EPS, MOE_EXPERTS, MOE_TOP_K,
                             PATCH_SIZE, TOP_K)
from src.errors import CatalogMismatchError, ConfigError, ShapeError
from src.model.catalog import VariableCatalog
from src.model.experts import DenseFeedForward, TokenMoeLayer, VaMoeLayer
from src.model.index_embedding import IndexEmbedding
from src.model.layers import MultiHeadSelfAttention
from src.tensor_core import (LayerNorm, Module, ModuleList, Parameter, ParameterList, Tensor, as_tensor,
                             ops, resolve_dtype, trunc_normal)


@dataclass
class ModelConfig:
    """Architecture hyperparameters"""
    grid: Tuple[int, int] = (GRID_HEIGHT, GRID_WIDTH)
    width: int = LATENT_WIDTH
    heads: int = ATTENTION_HEADS
    depth: int = DEPTH
    top_k: int = TOP_K
    patch_size: int = PATCH_SIZE
    architecture: str = ARCHITECTURE
    moe_experts: int = MOE_EXPERTS
    moe_top_k: int = MOE_TOP_K
    layer_norm_eps: float = LAYER_NORM_EPS
    dtype: str = "float32"

    def __post_init__(self):
        self.grid = tuple(int(v) for v in self.grid)
        self.validate()

    @property
    def k(self) -> int:
        """Channels routed through each CAE (C/4 unless set)"""
        return self.top_k or max(1, self.width // 4)

    @property
    def token_grid(self) -> Tuple[int, int]:
        return self.grid[0] // self.patch_size, self.grid[1] // self.patch_size

    @property
    def tokens(self) -> int:
        h, w = self.token_grid
        return h * w

    def validate(self):
        if self.architecture not in AVAILABLE_ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}; expected one of {AVAILABLE_ARCHITECTURES}")
        if self.patch_size < 1 or self.grid[0] % self.patch_size or self.grid[1] % self.patch_size:
            raise ConfigError(f"grid {self.grid} is not divisible by patch size {self.patch_size}")
        if self.heads < 1 or self.width % self.heads:
            raise ConfigError(f"latent width {self.width} is not divisible by {self.heads} heads")
        if not 1 <= self.k <= self.width:
            raise ConfigError(f"top_k={self.k} outside [1, {self.width}]")
        if self.depth < 1:
            raise ConfigError("depth must be at least 1")
        resolve_dtype(self.dtype)

    def to_dict(self) -> Dict:
        payload = asdict(self)
        payload["grid"] = list(self.grid)
        return payload

    @classmethod
    def from_dict(cls, payload: Dict) -> "ModelConfig":
        return cls(**payload)


# ===== Encoder / decoder =====

class PatchEncoder(Module):
    """3x3 convolution with stride p plus a learned position embedding"""

    def __init__(self, channel_slices: Sequence[int], width: int, patch: int, tokens: int,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.width = width
        self.patch = patch
        self.dtype = np.dtype(dtype)
        self.kernel = ParameterList([Parameter(trunc_normal((3, 3, c, width), rng, dtype=dtype))
                                     for c in channel_slices], axis=2)
        self.bias = Parameter(np.zeros(width, dtype=dtype), decay=False)
        self.position = Parameter(trunc_normal((tokens, width), rng, dtype=dtype))

    @property
    def in_channels(self) -> int:
        return sum(p.shape[2] for p in self.kernel)

    def forward(self, x) -> Tuple[Tensor, Tuple[int, int]]:
        feature = ops.add(ops.conv2d(x, self.kernel.joined(), stride=self.patch), self.bias)
        batch, height, width, _ = feature.shape
        if height * width != self.position.shape[0]:
            raise ShapeError(f"encoder produced {height}x{width} tokens, position table has {self.position.shape[0]}")
        tokens = ops.reshape(feature, (batch, height * width, self.width))
        return ops.add(tokens, self.position), (height, width)

    def add_channels(self, count: int, rng: np.random.Generator):
        """Append an input slice (3, 3, count, C) for new variables"""
        self.kernel.append(Parameter(trunc_normal((3, 3, count, self.width), rng, dtype=self.dtype)))


class PatchDecoder(Module):
    """
    Nearest upsampling by p followed by a 3x3 convolution back to field channels

    Kernel and bias are stored as output-channel slices so pretrained channels and
    channels added later can be frozen separately.
    """

    def __init__(self, channel_slices: Sequence[int], width: int, patch: int,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.width = width
        self.patch = patch
        self.dtype = np.dtype(dtype)
        self.kernel = ParameterList([Parameter(trunc_normal((3, 3, width, c), rng, dtype=dtype))
                                     for c in channel_slices], axis=3)
        self.bias = ParameterList([Parameter(np.zeros(c, dtype=dtype), decay=False)
                                   for c in channel_slices], axis=0)

    @property
    def out_channels(self) -> int:
        return sum(p.shape[3] for p in self.kernel)

    def forward(self, tokens, grid: Tuple[int, int]) -> Tensor:
        batch, _, width = tokens.shape
        field_ = ops.reshape(tokens, (batch, grid[0], grid[1], width))
        upsampled = ops.upsample_nearest(field_, self.patch)
        return ops.add(ops.conv2d(upsampled, self.kernel.joined(), stride=1), self.bias.joined())

    def add_channels(self, count: int, rng: np.random.Generator):
        self.kernel.append(Parameter(trunc_normal((3, 3, self.width, count), rng, dtype=self.dtype)))
        self.bias.append(Parameter(np.zeros(count, dtype=self.dtype), decay=False))


# ===== Blocks =====

class VaMoeBlock(Module):
    """x_mid = x + SA(LN(x)); x_out = x_mid + FFN(LN(x_mid)) with FFN the VA-MoE layer"""

    def __init__(self, width: int, heads: int, ffn: Module, rng: np.random.Generator,
                 dtype=np.float32, eps: float = LAYER_NORM_EPS):
        super().__init__()
        self.norm1 = LayerNorm(width, dtype=dtype, eps=eps)
        self.attention = MultiHeadSelfAttention(width, heads, rng, dtype=dtype)
        self.norm2 = LayerNorm(width, dtype=dtype, eps=eps)
        self.moe = ffn

    def forward(self, x, index_vectors: Optional[Dict[str, Tensor]] = None,
                decisions: Optional[Dict] = None) -> Tensor:
        mid = ops.add(x, self.attention(self.norm1(x)))
        return ops.add(mid, self.moe(self.norm2(mid), index_vectors, decisions))


def block_forward(x, block: VaMoeBlock, index_vectors: Dict[str, Tensor]) -> Tensor:
    """One transformer block with the expert feed-forward"""
    return block(x, index_vectors)


# ===== Model =====

class VaMoeForecaster(Module):
    """
    One-step forecaster over [B, H, W, N(+M)] fields

    Parameter names are hierarchical and stable, e.g.
    blocks.0.moe.caes.Z.gate_embed.fc1.weight or decoder.bias.1.
    """

    def __init__(self, catalog: VariableCatalog, config: Optional[ModelConfig] = None, seed: int = 0):
        super().__init__()
        self.config = config or ModelConfig()
        self.catalog = catalog
        dtype = resolve_dtype(self.config.dtype)
        rng = np.random.default_rng(seed)
        cfg = self.config
        slices = [catalog.n_initial] + ([catalog.n_incremental] if catalog.is_expanded else [])

        self.encoder = PatchEncoder(slices, cfg.width, cfg.patch_size, cfg.tokens, rng, dtype=dtype)
        if cfg.architecture == "vamoe":
            self.index_embedding = IndexEmbedding(catalog, cfg.width, rng, dtype=dtype)
        else:
            self.index_embedding = None
        self.blocks = ModuleList([VaMoeBlock(cfg.width, cfg.heads, self._make_ffn(rng, dtype), rng,
                                             dtype=dtype, eps=cfg.layer_norm_eps)
                                  for _ in range(cfg.depth)])
        self.decoder = PatchDecoder(slices, cfg.width, cfg.patch_size, rng, dtype=dtype)
        self.assign_names()
        logger.debug(f"Built {cfg.architecture} model: {catalog}, {self.parameter_count()} parameters")

    def _make_ffn(self, rng: np.random.Generator, dtype) -> Module:
        cfg = self.config
        if cfg.architecture == "vamoe":
            return VaMoeLayer(self.catalog.group_names, cfg.width, cfg.k, rng, dtype=dtype)
        if cfg.architecture == "vit_moe":
            return TokenMoeLayer(cfg.width, cfg.moe_experts, cfg.moe_top_k, rng, dtype=dtype)
        return DenseFeedForward(cfg.width, rng, dtype=dtype)

    @property
    def channel_count(self) -> int:
        return self.encoder.in_channels

    @property
    def dtype(self) -> np.dtype:
        return resolve_dtype(self.config.dtype)

    def index_vectors(self) -> Dict[str, Tensor]:
        if self.index_embedding is None:
            return {}
        return self.index_embedding.project_all()

    def _check_input(self, x) -> Tuple[Tensor, bool]:
        x = as_tensor(x)
        unbatched = x.ndim == 3
        if unbatched:
            x = ops.reshape(x, (1,) + x.shape)
        if x.ndim != 4:
            raise ShapeError(f"expected [B,H,W,C] or [H,W,C] input, got {x.shape}")
        if x.shape[-1] != self.channel_count:
            raise CatalogMismatchError(f"input has {x.shape[-1]} channels, model expects {self.channel_count}")
        if tuple(x.shape[1:3]) != self.config.grid:
            raise ShapeError(f"input grid {x.shape[1:3]} differs from model grid {self.config.grid}")
        return x, unbatched

    def encode(self, x) -> Tuple[Tensor, Tuple[int, int]]:
        x, _ = self._check_input(x)
        return self.encoder(x)

    def decode(self, tokens, grid: Tuple[int, int]) -> Tensor:
        return self.decoder(tokens, grid)

    def propagate(self, tokens, decisions: Optional[List[Dict]] = None) -> Tensor:
        index_vectors = self.index_vectors()
        for block in self.blocks:
            trace = {} if decisions is not None else None
            tokens = block(tokens, index_vectors, trace)
            if decisions is not None:
                decisions.append(trace)
        return tokens

    def forward(self, x, decisions: Optional[List[Dict]] = None) -> Tensor:
        x, unbatched = self._check_input(x)
        tokens, grid = self.encoder(x)
        out = self.decoder(self.propagate(tokens, decisions), grid)
        return ops.reshape(out, out.shape[1:]) if unbatched else out

    def reconstruct(self, x) -> Tensor:
        """Decoder(Encoder(x)): autoencoding path without the transformer blocks"""
        x, unbatched = self._check_input(x)
        tokens, grid = self.encoder(x)
        out = self.decoder(tokens, grid)
        return ops.reshape(out, out.shape[1:]) if unbatched else out

    def forecast(self, x) -> np.ndarray:
        """Forward pass outside any tape, returned as a plain array"""
        return self.forward(x).numpy()


def model_forward(x, model: VaMoeForecaster) -> Tensor:
    """Next-step field for input field x"""
    return model(x)
