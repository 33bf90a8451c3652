import numpy as np
import pytest

from src.errors import ConfigError, NonFiniteError, ShapeError, UnknownChannelError
from src.losses import (DynamicLossWeights, OptimizerState, clip_grad_norm, dynamic_prediction_loss,
                        latitude_weights, optimizer_step, reconstruction_loss, rmse, rmse_all, total_loss)
from src.model import VaMoeForecaster
from src.tensor_core import Parameter, Tape

MEAN_SQUARES = np.array([0.25, 1.0, 3.0])


def _constant_residual_pair():
    """Target zero, prediction sqrt(m_c) everywhere: channel c has mean squared residual m_c exactly"""
    target = np.zeros((2, 4, 4, 3))
    pred = np.broadcast_to(np.sqrt(MEAN_SQUARES), target.shape).copy()
    return pred, target


# ===== Dynamic prediction loss =====

def test_loss_value_matches_closed_form():
    pred, target = _constant_residual_pair()
    weights = DynamicLossWeights(3, dtype=np.float64)
    weights.w.assign(np.array([[[0.1, -0.2, 0.3]]]))
    w = weights.w.data.reshape(-1)
    expected = np.mean(MEAN_SQUARES * np.exp(-w) + w)
    assert dynamic_prediction_loss(pred, target, weights).item() == pytest.approx(expected, rel=1e-12)


def test_weight_gradient_carries_channel_mean_factor():
    pred, target = _constant_residual_pair()
    weights = DynamicLossWeights(3, dtype=np.float64)
    weights.w.assign(np.array([[[0.5, 0.0, -0.5]]]))
    with Tape() as tape:
        loss = dynamic_prediction_loss(pred, target, weights)
    tape.backward(loss)
    assert tape.accumulate([weights.w]) == 1
    w = weights.w.data.reshape(-1)
    assert np.allclose(weights.w.grad.reshape(-1), (1.0 - MEAN_SQUARES * np.exp(-w)) / 3.0)


def test_weights_settle_at_log_mean_square():
    pred, target = _constant_residual_pair()
    weights = DynamicLossWeights(3, dtype=np.float64)
    for _ in range(200):
        weights.w.zero_grad()
        with Tape() as tape:
            loss = dynamic_prediction_loss(pred, target, weights)
        tape.backward(loss)
        tape.accumulate([weights.w])
        weights.w.assign(weights.w.data - 0.5 * 3.0 * weights.w.grad)
    assert np.allclose(weights.w.data.reshape(-1), np.log(MEAN_SQUARES), atol=1e-3)


def test_channel_mask_averages_supervised_channels_only():
    pred, target = _constant_residual_pair()
    weights = DynamicLossWeights(3, dtype=np.float64)
    weights.w.assign(np.array([[[0.2, 0.4, 0.6]]]))
    w = weights.w.data.reshape(-1)
    per_channel = MEAN_SQUARES * np.exp(-w) + w
    masked = dynamic_prediction_loss(pred, target, weights, mask=np.array([1.0, 0.0, 1.0]))
    assert masked.item() == pytest.approx((per_channel[0] + per_channel[2]) / 2.0)
    with pytest.raises(ShapeError):
        dynamic_prediction_loss(pred, target, weights, mask=np.zeros(3))
    with pytest.raises(ShapeError):
        dynamic_prediction_loss(pred, target, weights, mask=np.ones(2))


def test_prediction_loss_shape_checks():
    weights = DynamicLossWeights(3, dtype=np.float64)
    with pytest.raises(ShapeError):
        dynamic_prediction_loss(np.zeros((1, 2, 2, 3)), np.zeros((1, 2, 2, 2)), weights)
    with pytest.raises(ShapeError):
        dynamic_prediction_loss(np.zeros((1, 2, 2, 4)), np.zeros((1, 2, 2, 4)), weights)
    with pytest.raises(ConfigError):
        DynamicLossWeights(3, recon_lambda=-1.0)


def test_loss_weights_expand_with_zeros():
    weights = DynamicLossWeights(2)
    weights.w.assign(np.array([[[0.5, 0.5]]]))
    weights.expand(3)
    assert weights.w.data.reshape(-1).tolist() == [0.5, 0.5, 0.0, 0.0, 0.0]
    assert weights.w.name == "loss.w"


# ===== Total objective =====

def test_total_loss_with_and_without_reconstruction(initial_catalog, tiny_config64, rng):
    model = VaMoeForecaster(initial_catalog, tiny_config64, seed=0)
    x = rng.standard_normal((1, 8, 16, 5))
    target = rng.standard_normal((1, 8, 16, 5))
    pred = model(x)

    silent = DynamicLossWeights(5, recon_lambda=0.0, dtype=np.float64)
    breakdown = total_loss(pred, target, x, model, silent)
    assert breakdown.total.item() == dynamic_prediction_loss(pred, target, silent).item()
    assert breakdown.reconstruction == 0.0
    assert breakdown.mse == pytest.approx(np.mean(np.square(pred.data - target)))

    weighted = DynamicLossWeights(5, recon_lambda=0.5, dtype=np.float64)
    breakdown = total_loss(pred, target, x, model, weighted)
    recon = np.mean(np.square(model.reconstruct(x).data - x))
    assert breakdown.reconstruction == pytest.approx(recon)
    assert reconstruction_loss(x, model).item() == pytest.approx(recon)
    assert breakdown.total.item() == pytest.approx(breakdown.prediction + 0.5 * recon)


def test_reconstruction_bypasses_transformer_blocks(initial_catalog, tiny_config64, rng):
    model = VaMoeForecaster(initial_catalog, tiny_config64, seed=0)
    x = rng.standard_normal((2, 8, 16, 5))
    named = dict(model.named_parameters())
    blocks = {name: p for name, p in named.items() if name.startswith("blocks.0.")}
    assert blocks

    with Tape() as tape:
        loss = reconstruction_loss(x, model)
    tape.backward(loss)
    tape.accumulate(named.values())
    assert all(tape.grad(p) is None for p in blocks.values())
    assert all(not np.any(p.grad) for p in blocks.values())
    assert np.any(named["encoder.kernel.0"].grad)

    for param in blocks.values():
        param.assign(param.data + rng.standard_normal(param.shape))
    assert reconstruction_loss(x, model).item() == loss.item()


# ===== Optimizer =====

def test_frozen_parameters_are_not_updated():
    frozen = Parameter(np.ones(3), name="a", frozen=True)
    active = Parameter(np.ones(3), name="b")
    frozen.grad = np.full(3, 0.5)
    active.grad = np.array([0.5, -2.0, 0.0])
    state = OptimizerState(lr=0.1, weight_decay=0.0)
    optimizer_step([frozen, active], state, clip=0.0)
    assert np.array_equal(frozen.data, np.ones(3))
    assert np.allclose(active.data, [0.9, 1.1, 1.0], atol=1e-6)
    assert set(state.first_moment) == {"b"}
    assert state.step == 1


def test_first_steps_match_hand_computed_adamw():
    scalar = Parameter(np.array([0.0]), name="s")
    scalar.grad = np.array([1.0])
    state = OptimizerState(lr=0.001, weight_decay=0.0)
    optimizer_step([scalar], state, clip=0.0)
    assert scalar.data[0] == pytest.approx(-0.001 / (1.0 + 1e-8), rel=1e-12)

    param = Parameter(np.array([1.0, -2.0]), name="p")
    state = OptimizerState(lr=0.1, weight_decay=0.01)
    grads = [np.array([0.5, -0.1]), np.array([-0.3, 0.2])]
    value, m, v = param.data.copy(), np.zeros(2), np.zeros(2)
    for step, grad in enumerate(grads, start=1):
        param.grad = grad
        optimizer_step([param], state, clip=0.0)
        m = 0.9 * m + 0.1 * grad
        v = 0.999 * v + 0.001 * grad * grad
        m_hat = m / (1.0 - 0.9 ** step)
        v_hat = v / (1.0 - 0.999 ** step)
        value = value * (1.0 - 0.1 * 0.01) - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
        assert np.allclose(param.data, value, rtol=1e-12, atol=1e-14)
    assert state.step == 2


def test_quadratic_bowl_converges_within_500_steps():
    x = Parameter(np.array([1.0]), name="x")
    state = OptimizerState(lr=0.05, weight_decay=0.0)
    for _ in range(500):
        x.grad = 2.0 * x.data
        optimizer_step([x], state, clip=0.0)
    assert abs(x.data[0]) < 1e-3


def test_decoupled_weight_decay_respects_decay_flag():
    decayed = Parameter(np.full(2, 2.0), name="w")
    plain = Parameter(np.full(2, 2.0), name="b", decay=False)
    optimizer_step([decayed, plain], OptimizerState(lr=0.01, weight_decay=0.1), clip=0.0)
    assert np.allclose(decayed.data, 2.0 * (1.0 - 0.001))
    assert np.array_equal(plain.data, np.full(2, 2.0))


def test_clip_grad_norm_scales_to_max_norm():
    params = [Parameter(np.zeros(2)), Parameter(np.zeros(1))]
    params[0].grad = np.array([3.0, 0.0])
    params[1].grad = np.array([4.0])
    assert clip_grad_norm(params, 1.0) == pytest.approx(5.0)
    assert np.sqrt(sum(float(np.sum(p.grad ** 2)) for p in params)) == pytest.approx(1.0)
    assert clip_grad_norm(params, 10.0) == pytest.approx(1.0)


def test_non_finite_gradient_stops_the_step():
    param = Parameter(np.ones(2), name="p")
    param.grad = np.array([np.nan, 0.0])
    with pytest.raises(NonFiniteError):
        optimizer_step([param], OptimizerState(lr=0.1))
    param.frozen = True
    optimizer_step([param], OptimizerState(lr=0.1))
    assert np.array_equal(param.data, np.ones(2))


# ===== Metrics =====

def test_latitude_weights_have_unit_mean_and_symmetry():
    weights = latitude_weights(8)
    assert weights.mean() == pytest.approx(1.0)
    assert np.allclose(weights, weights[::-1])
    assert weights[3] > weights[0]


def test_rmse_per_channel():
    target = np.zeros((2, 4, 8, 3))
    pred = target + np.array([1.0, 2.0, 3.0])
    assert np.allclose(rmse_all(pred, target), [1.0, 2.0, 3.0])
    assert np.allclose(rmse_all(pred, target, latitude_weighted=True), [1.0, 2.0, 3.0])
    assert rmse(pred, target, "b", channel_names=["a", "b", "c"]) == pytest.approx(2.0)
    assert rmse(pred, target, 2) == pytest.approx(3.0)


def test_rmse_errors():
    field = np.zeros((4, 8, 3))
    with pytest.raises(UnknownChannelError):
        rmse(field, field, "t2m", channel_names=["a", "b", "c"])
    with pytest.raises(UnknownChannelError):
        rmse(field, field, 3)
    with pytest.raises(ShapeError):
        rmse_all(field, np.zeros((4, 8, 2)))
    with pytest.raises(ShapeError):
        rmse_all(np.zeros((4, 3)), np.zeros((4, 3)))
