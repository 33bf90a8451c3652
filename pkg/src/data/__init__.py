"""
Data package
Synthetic trajectories, datasets and splits, normalization and dataset files
"""

from .synthetic import (FieldSimulator, GroupDynamics, SyntheticFieldSpec, default_dynamics, default_spec, generate,
                        persistence_rmse)
from .dataset import (Dataset, DatasetBundle, DatasetPhase, DatasetSplit, SplitSizes, generate_dataset, make_bundle,
                      split_trajectory)
from .normalization import NormalizationStats, denormalize, normalize, phase_stats
from .storage import BUNDLE_FILES, decode_dataset, header_size, load_bundle, load_dataset, save_bundle, save_dataset

__all__ = ['FieldSimulator', 'GroupDynamics', 'SyntheticFieldSpec', 'default_dynamics', 'default_spec', 'generate',
           'persistence_rmse', 'Dataset', 'DatasetBundle', 'DatasetPhase', 'DatasetSplit', 'SplitSizes',
           'generate_dataset', 'make_bundle', 'split_trajectory', 'NormalizationStats', 'denormalize',
           'normalize', 'phase_stats', 'BUNDLE_FILES', 'decode_dataset', 'header_size', 'load_bundle', 'load_dataset',
           'save_bundle', 'save_dataset']
