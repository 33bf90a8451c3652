"""
Run configuration
All tunables of one run, loaded from a plain-text `key = value` file and echoed
into the run directory
"""

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional

from loguru import logger

import config.settings as settings
from src.data.dataset import SplitSizes
from src.errors import ConfigError
from src.model.catalog import VariableCatalog, VariableGroup, default_catalog, surface_groups
from src.model.network import ModelConfig

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


@dataclass
class RunConfig:
    """Desk-scale defaults from config.settings; every field can be set from the config file"""
    seed: int = 0
    output_dir: str = settings.DEFAULT_OUTPUT_DIR
    data_dir: str = ""
    dtype: str = "float32"
    # catalog and grid
    grid_height: int = settings.GRID_HEIGHT
    grid_width: int = settings.GRID_WIDTH
    upper_air_levels: int = settings.UPPER_AIR_LEVELS
    surface_grouping: str = settings.SURFACE_GROUPING
    # architecture
    architecture: str = settings.ARCHITECTURE
    width: int = settings.LATENT_WIDTH
    heads: int = settings.ATTENTION_HEADS
    depth: int = settings.DEPTH
    top_k: int = settings.TOP_K
    patch_size: int = settings.PATCH_SIZE
    moe_experts: int = settings.MOE_EXPERTS
    moe_top_k: int = settings.MOE_TOP_K
    # objective and optimizer
    recon_lambda: float = settings.RECON_LAMBDA
    lr_initial: float = settings.LR_INITIAL
    lr_incremental: float = settings.LR_INCREMENTAL
    weight_decay: float = settings.WEIGHT_DECAY
    grad_clip: float = settings.GRAD_CLIP
    # schedule
    initial_epochs: int = settings.INITIAL_EPOCHS
    incremental_epochs: int = settings.INCREMENTAL_EPOCHS
    full_retrain_epochs: int = settings.FULL_RETRAIN_EPOCHS
    batch_size: int = settings.BATCH_SIZE
    max_steps_per_epoch: int = 0
    eval_every: int = settings.EVAL_EVERY
    lead_times: List[int] = field(default_factory=lambda: list(settings.LEAD_TIMES))
    overfit_samples: int = settings.OVERFIT_SAMPLES
    overfit_steps: int = settings.OVERFIT_STEPS
    # incremental phase
    reinit_index_projector: bool = settings.REINIT_INDEX_PROJECTOR
    freeze_decoder_old: bool = settings.FREEZE_DECODER_OLD
    old_channel_fraction: float = settings.OLD_CHANNEL_FRACTION
    # data
    initial_pairs: int = settings.INITIAL_PAIRS
    incremental_pairs: int = settings.INCREMENTAL_PAIRS
    test_pairs: int = settings.TEST_PAIRS
    test_gap: int = settings.TEST_GAP
    spin_up_steps: int = settings.SPIN_UP_STEPS
    # evaluation and experiments
    latitude_weighted: bool = settings.LATITUDE_WEIGHTED
    eval_workers: int = settings.EVAL_WORKERS
    eval_batch_size: int = settings.EVAL_BATCH_SIZE
    forgetting_seeds: int = settings.FORGETTING_SEEDS
    gradcheck_tolerance: float = settings.GRADCHECK_TOLERANCE
    gradcheck_model_tolerance: float = settings.GRADCHECK_MODEL_TOLERANCE

    def __post_init__(self):
        self.validate()

    # ===== Validation =====

    def validate(self):
        positive = ["grid_height", "grid_width", "upper_air_levels", "width", "heads", "depth", "patch_size",
                    "moe_experts", "moe_top_k", "batch_size", "eval_every", "initial_pairs",
                    "incremental_pairs", "test_pairs", "eval_workers", "eval_batch_size", "forgetting_seeds",
                    "overfit_steps"]
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        non_negative = ["seed", "top_k", "initial_epochs", "incremental_epochs", "full_retrain_epochs",
                        "max_steps_per_epoch", "overfit_samples", "test_gap", "spin_up_steps", "recon_lambda",
                        "weight_decay", "grad_clip"]
        for name in non_negative:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("lr_initial", "lr_incremental", "gradcheck_tolerance", "gradcheck_model_tolerance"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if not 0.0 < self.old_channel_fraction <= 1.0:
            raise ConfigError(f"old_channel_fraction must be in (0, 1], got {self.old_channel_fraction}")
        if not self.lead_times or min(self.lead_times) < 1:
            raise ConfigError(f"lead_times must be positive step counts, got {self.lead_times}")
        if max(self.lead_times) >= self.test_pairs + 1:
            raise ConfigError(f"longest lead {max(self.lead_times)} needs more than {self.test_pairs} test pairs")
        if self.surface_grouping not in ("single", "per_variable"):
            raise ConfigError(f"unknown surface_grouping {self.surface_grouping!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        # both raise ConfigError on inconsistent values
        self.model_config()
        self.split_sizes()

    # ===== Derived objects =====

    def model_config(self) -> ModelConfig:
        return ModelConfig(grid=(self.grid_height, self.grid_width), width=self.width, heads=self.heads,
                           depth=self.depth, top_k=self.top_k, patch_size=self.patch_size,
                           architecture=self.architecture, moe_experts=self.moe_experts,
                           moe_top_k=self.moe_top_k, dtype=self.dtype)

    def split_sizes(self) -> SplitSizes:
        return SplitSizes(self.initial_pairs, self.incremental_pairs, self.test_pairs, self.test_gap)

    def initial_catalog(self) -> VariableCatalog:
        return default_catalog(self.upper_air_levels)

    def new_groups(self) -> List[VariableGroup]:
        return surface_groups(self.surface_grouping)

    def full_catalog(self) -> VariableCatalog:
        return self.initial_catalog().extend(self.new_groups())

    def with_overrides(self, **overrides) -> "RunConfig":
        values = self.as_dict()
        unknown = set(overrides) - set(values)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig(**values)

    def as_dict(self) -> Dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    # ===== Text format =====

    def to_text(self) -> str:
        lines = ["# resolved run configuration"]
        for name, value in self.as_dict().items():
            if isinstance(value, bool):
                value = str(value).lower()
            elif isinstance(value, list):
                value = ", ".join(str(v) for v in value)
            lines.append(f"{name} = {value}")
        return "\n".join(lines) + "\n"

    def write_echo(self, directory) -> Path:
        path = Path(directory) / "config.txt"
        path.write_text(self.to_text())
        return path

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for number, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{number}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"{source}:{number}: unknown config key {key!r}")
            if key in values:
                raise ConfigError(f"{source}:{number}: duplicate config key {key!r}")
            values[key] = _parse_value(key, value, types[key], f"{source}:{number}")
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        config = cls.from_text(path.read_text(), str(path))
        logger.info(f"Loaded run config from {path}")
        return config


def _parse_value(key: str, value: str, kind, where: str):
    try:
        if kind in (bool, "bool"):
            lowered = value.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(value)
        if kind in (int, "int"):
            return int(value)
        if kind in (float, "float"):
            return float(value)
        if kind in (str, "str"):
            return value
        # List[int]
        return [int(v) for v in value.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {key} = {value!r}") from None


def load_run_config(path: Optional[str] = None, seed: Optional[int] = None) -> RunConfig:
    """Config file (or defaults) with the command-line seed applied on top"""
    config = RunConfig.from_file(path) if path else RunConfig()
    if seed is not None:
        config = config.with_overrides(seed=seed)
    return config
