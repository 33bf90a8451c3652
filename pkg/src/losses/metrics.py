"""
Evaluation metrics
Per-channel RMSE with optional cos-latitude weighting
"""

from typing import Optional, Sequence

import numpy as np

from src.errors import ShapeError, UnknownChannelError


def latitude_weights(height: int) -> np.ndarray:
    """cos(latitude) at cell centres from 90N to 90S, normalised to mean 1"""
    lat = np.linspace(90.0, -90.0, height + 1)
    centres = 0.5 * (lat[:-1] + lat[1:])
    weights = np.cos(np.deg2rad(centres))
    return weights / weights.mean()


def rmse_all(pred: np.ndarray, target: np.ndarray, latitude_weighted: bool = False) -> np.ndarray:
    """
    RMSE of every channel over the spatial axes (and any leading batch axes)

    Args:
        pred, target: [..., H, W, C]

    Returns:
        array [C]
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"rmse: prediction {pred.shape} and target {target.shape} differ")
    if pred.ndim < 3:
        raise ShapeError(f"rmse expects [..., H, W, C] fields, got {pred.shape}")
    squared = np.square(pred - target)
    if latitude_weighted:
        squared = squared * latitude_weights(pred.shape[-3])[:, None, None]
    axes = tuple(range(pred.ndim - 1))
    return np.sqrt(squared.mean(axis=axes))


def rmse(pred: np.ndarray, target: np.ndarray, channel, channel_names: Optional[Sequence[str]] = None,
         latitude_weighted: bool = False) -> float:
    """RMSE of one channel, given by index or by name (names need `channel_names`)"""
    if isinstance(channel, str):
        if channel_names is None or channel not in channel_names:
            raise UnknownChannelError(f"unknown channel {channel!r}")
        channel = list(channel_names).index(channel)
    channels = np.shape(pred)[-1]
    if not 0 <= channel < channels:
        raise UnknownChannelError(f"channel index {channel} outside [0, {channels})")
    return float(rmse_all(np.asarray(pred)[..., channel:channel + 1],
                          np.asarray(target)[..., channel:channel + 1], latitude_weighted)[0])
