"""
Gradient-check suite
Central finite differences at 64-bit for every differentiable operation, one
full block, the loss weights and the end-to-end model
"""

from dataclasses import replace
from typing import Callable, List

import numpy as np
from loguru import logger

from src.losses.objectives import DynamicLossWeights, dynamic_prediction_loss, total_loss
from src.model.catalog import VariableCatalog
from src.model.experts import VaMoeLayer
from src.model.network import ModelConfig, VaMoeBlock, VaMoeForecaster
from src.tensor_core import GradcheckResult, Tensor, check_gradient, check_parameter_gradients, ops


def _jitter(module, rng: np.random.Generator, scale: float):
    """Move every parameter off its (possibly zero) initial value"""
    for param in module.parameters():
        param.assign(param.data + rng.normal(0.0, scale, param.shape))


def op_checks(tolerance: float, seed: int = 0) -> List[GradcheckResult]:
    rng = np.random.default_rng(seed)

    def normal(*shape):
        return rng.standard_normal(shape)

    def positive(*shape):
        return rng.uniform(0.5, 2.0, shape)

    idx = np.argsort(-rng.standard_normal((4, 6)), axis=-1)[..., :3]

    cases = [
        ("add", ops.add, [normal(2, 3, 4), normal(4)]),
        ("sub", ops.sub, [normal(2, 3, 4), normal(3, 1)]),
        ("mul", ops.mul, [normal(2, 3, 4), normal(1, 4)]),
        ("div", ops.div, [normal(2, 3, 4), positive(2, 3, 4)]),
        ("neg", ops.neg, [normal(3, 4)]),
        ("exp", ops.exp, [normal(3, 4)]),
        ("log", ops.log, [positive(3, 4)]),
        ("square", ops.square, [normal(3, 4)]),
        ("sqrt", ops.sqrt, [positive(3, 4)]),
        ("gelu", ops.gelu, [normal(3, 5)]),
        ("sum", lambda a: ops.sum(a, axis=1), [normal(2, 3, 4)]),
        ("mean", lambda a: ops.mean(a, axis=(0, 1)), [normal(2, 3, 4)]),
        ("reshape", lambda a: ops.reshape(a, (4, 6)), [normal(2, 3, 4)]),
        ("transpose", lambda a: ops.transpose(a, (2, 0, 1)), [normal(2, 3, 4)]),
        ("concat", lambda a, b: ops.concat([a, b], axis=-1), [normal(2, 3), normal(2, 2)]),
        ("slice_last", lambda a: ops.slice_last(a, 1, 4), [normal(2, 5)]),
        ("matmul_shared", ops.matmul, [normal(2, 3, 4), normal(4, 5)]),
        ("matmul_batched", ops.matmul, [normal(2, 3, 4), normal(2, 4, 5)]),
        ("layer_norm", ops.layer_norm, [normal(3, 6), normal(6), normal(6)]),
        ("softmax", ops.softmax, [normal(3, 6)]),
        ("topk", lambda a: ops.topk(a, 3)[1], [normal(4, 6)]),
        ("gather_channels", lambda a: ops.gather_channels(a, idx), [normal(4, 6)]),
        ("conv2d_stride1", lambda x, k: ops.conv2d(x, k, stride=1), [normal(1, 4, 4, 2), normal(3, 3, 2, 3)]),
        ("conv2d_stride2", lambda x, k: ops.conv2d(x, k, stride=2), [normal(2, 4, 4, 2), normal(3, 3, 2, 3)]),
        ("upsample_nearest", lambda x: ops.upsample_nearest(x, 2), [normal(1, 2, 3, 2)]),
    ]
    return [check_gradient(name, fn, inputs, tolerance=tolerance, seed=seed) for name, fn, inputs in cases]


def block_checks(tolerance: float, seed: int = 0) -> List[GradcheckResult]:
    """One VA-MoE block at 8 tokens and width 8, w.r.t. its input and its parameters"""
    rng = np.random.default_rng(seed)
    width, groups = 8, ["A", "B"]
    layer = VaMoeLayer(groups, width, 2, rng, dtype=np.float64)
    block = VaMoeBlock(width, 2, layer, rng, dtype=np.float64)
    block.assign_names("block")
    _jitter(block, rng, 0.3)
    vectors = {g: Tensor(rng.standard_normal((1, 1, width))) for g in groups}
    x = rng.standard_normal((1, 8, width))

    results = [check_gradient("block_input", lambda t: block(t, vectors), [x], tolerance=tolerance, seed=seed)]

    def loss():
        return ops.mean(ops.square(block(Tensor(x), vectors)))

    results.append(check_parameter_gradients("block_parameters", loss, block.parameters(), fraction=0.1,
                                             tolerance=tolerance, seed=seed))
    return results


def loss_weight_checks(tolerance: float, seed: int = 0) -> List[GradcheckResult]:
    rng = np.random.default_rng(seed)
    weights = DynamicLossWeights(4, dtype=np.float64)
    weights.w.assign(rng.normal(0.0, 0.5, weights.w.shape))
    pred, target = rng.standard_normal((2, 3, 5, 4)), rng.standard_normal((2, 3, 5, 4))

    def loss():
        return dynamic_prediction_loss(pred, target, weights)

    return [check_parameter_gradients("dynamic_loss_w", loss, weights.parameters(), fraction=1.0,
                                      tolerance=tolerance, seed=seed)]


def model_checks(catalog: VariableCatalog, config: ModelConfig, tolerance: float,
                 seed: int = 0) -> List[GradcheckResult]:
    """End-to-end: mean squared output and total loss w.r.t. 1% of all parameters"""
    rng = np.random.default_rng(seed)
    model = VaMoeForecaster(catalog, replace(config, dtype="float64"), seed=seed)
    _jitter(model, rng, 0.02)
    weights = DynamicLossWeights(model.channel_count, dtype=np.float64)
    height, width = config.grid
    x = rng.standard_normal((1, height, width, model.channel_count))
    y = rng.standard_normal((1, height, width, model.channel_count))

    def output_loss():
        return ops.mean(ops.square(model(x)))

    def objective():
        return total_loss(model(x), y, x, model, weights).total

    params = model.parameters()
    return [
        check_parameter_gradients("model_output", output_loss, params, fraction=0.01, tolerance=tolerance,
                                  seed=seed),
        check_parameter_gradients("total_loss", objective, params + weights.parameters(), fraction=0.01,
                                  tolerance=tolerance, seed=seed + 1),
    ]


def run_suite(catalog: VariableCatalog, config: ModelConfig, tolerance: float, model_tolerance: float,
              seed: int = 0, progress: Callable[[GradcheckResult], None] = None) -> List[GradcheckResult]:
    results = []
    for group in (op_checks(tolerance, seed), block_checks(tolerance, seed), loss_weight_checks(tolerance, seed),
                  model_checks(catalog, config, model_tolerance, seed)):
        for result in group:
            logger.debug(result.describe())
            if progress is not None:
                progress(result)
            results.append(result)
    failed = [r for r in results if not r.passed]
    logger.info(f"Gradcheck: {len(results) - len(failed)}/{len(results)} passed, "
                f"worst {max(r.worst_relative_error for r in results):.3e}")
    return results


def suite_table(results: List[GradcheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  {'worst_rel_err':>13}  {'tolerance':>9}  {'points':>6}  status  worst_point"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.worst_relative_error:>13.3e}  {r.tolerance:>9.0e}  {r.points:>6}  "
                     f"{'PASS' if r.passed else 'FAIL':<6}  {r.worst_point}")
    return "\n".join(lines) + "\n"
