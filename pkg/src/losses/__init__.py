"""
Losses package
Training objectives, the AdamW optimizer and evaluation metrics
"""

from .objectives import DynamicLossWeights, LossBreakdown, dynamic_prediction_loss, reconstruction_loss, total_loss
from .optimizer import OptimizerState, clip_grad_norm, global_grad_norm, optimizer_step, zero_grad
from .metrics import latitude_weights, rmse, rmse_all

__all__ = ['DynamicLossWeights', 'LossBreakdown', 'dynamic_prediction_loss', 'reconstruction_loss',
           'total_loss', 'OptimizerState', 'clip_grad_norm', 'global_grad_norm', 'optimizer_step',
           'zero_grad', 'latitude_weights', 'rmse', 'rmse_all']
