import numpy as np
import pytest

from src.errors import DomainError, IndexOutOfRangeError, NonFiniteError, ShapeError
from src.tensor_core import (Linear, Parameter, ParameterList, Tape, Tensor, check_gradient,
                             check_parameter_gradients, ops, relative_error)


# ===== Tensors and parameters =====

def test_tensor_is_read_only():
    t = Tensor(np.arange(6.0).reshape(2, 3))
    with pytest.raises(ValueError):
        t.data[0, 0] = 5.0
    copy = t.numpy()
    copy[0, 0] = 5.0
    assert t.data[0, 0] == 0.0


def test_parameter_assign_keeps_shape():
    param = Parameter(np.zeros((2, 3)), name="w")
    param.assign(np.ones((2, 3)))
    assert np.array_equal(param.data, np.ones((2, 3)))
    with pytest.raises(ShapeError):
        param.assign(np.ones(3))


def test_unsupported_dtype_rejected():
    with pytest.raises(ShapeError):
        Tensor(np.ones(3), dtype=np.float16)


# ===== Broadcasting and domain errors =====

def test_add_broadcast_gradient_sums_over_expanded_axis():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.arange(3.0), requires_grad=True)
    with Tape() as tape:
        out = ops.sum(ops.add(a, b))
    tape.backward(out)
    assert np.array_equal(tape.grad(b), np.full(3, 2.0))
    assert np.array_equal(tape.grad(a), np.ones((2, 3)))


def test_broadcast_expanding_both_operands_is_rejected():
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.ones((2, 1))), Tensor(np.ones((1, 3))))


def test_domain_errors():
    with pytest.raises(DomainError):
        ops.log(Tensor(np.array([1.0, 0.0])))
    with pytest.raises(DomainError):
        ops.div(Tensor(np.ones(2)), Tensor(np.array([1.0, 0.0])))
    with pytest.raises(DomainError):
        ops.elementwise("tanh", Tensor(np.ones(2)))


def test_non_finite_result_raises():
    with pytest.raises(NonFiniteError):
        ops.exp(Tensor(np.array([1000.0])))


def test_matmul_inner_dimension_mismatch():
    with pytest.raises(ShapeError):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


# ===== Tape =====

def test_reused_value_accumulates_gradient():
    x = Tensor(np.array([3.0]), requires_grad=True)
    with Tape() as tape:
        y = ops.sum(ops.mul(x, x))
    tape.backward(y)
    assert tape.grad(x)[0] == pytest.approx(6.0)


def test_backward_needs_scalar_or_seed():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = ops.square(x)
    with pytest.raises(ShapeError):
        tape.backward(y)
    tape.backward(y, seed=np.ones(3))
    assert np.array_equal(tape.grad(x), np.full(3, 2.0))


def test_ops_outside_tape_record_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    y = ops.square(x)
    assert not y.requires_grad


def test_frozen_parameter_gets_no_gradient():
    layer = Linear(3, 2, np.random.default_rng(0), dtype=np.float64)
    layer.weight.frozen = True
    with Tape() as tape:
        loss = ops.sum(layer(Tensor(np.ones((4, 3)))))
    tape.backward(loss)
    assert tape.accumulate(layer.parameters()) == 1
    assert np.array_equal(layer.weight.grad, np.zeros((3, 2)))
    assert np.array_equal(layer.bias.grad, np.full(2, 4.0))


# ===== Routing ops =====

def test_topk_breaks_ties_by_lower_index():
    indices, values = ops.topk(Tensor(np.array([[0.5, 0.9, 0.9, 0.1]])), 2)
    assert indices.tolist() == [[1, 2]]
    assert values.data.tolist() == [[0.9, 0.9]]


def test_topk_width_out_of_range():
    with pytest.raises(IndexOutOfRangeError):
        ops.topk(Tensor(np.ones((2, 3))), 4)
    with pytest.raises(IndexOutOfRangeError):
        ops.topk(Tensor(np.ones((2, 3))), 0)


def test_gather_channels_scatter_adds_repeated_indices():
    x = Tensor(np.arange(4.0).reshape(1, 4), requires_grad=True)
    idx = np.array([[2, 2, 0]])
    with Tape() as tape:
        out = ops.sum(ops.gather_channels(x, idx))
    tape.backward(out)
    assert out.item() == pytest.approx(4.0)
    assert tape.grad(x).tolist() == [[1.0, 0.0, 2.0, 0.0]]


def test_softmax_rows_sum_to_one():
    probs = ops.softmax(Tensor(np.random.default_rng(0).standard_normal((5, 7))))
    assert np.allclose(probs.data.sum(axis=-1), 1.0)


def test_softmax_is_stable_for_large_logits():
    x = Tensor(np.array([[1000.0, 0.0], [-1000.0, -1000.0]]), requires_grad=True)
    with Tape() as tape:
        probs = ops.softmax(x)
    assert np.all(np.isfinite(probs.data))
    assert np.allclose(probs.data, [[1.0, 0.0], [0.5, 0.5]])
    tape.backward(probs, seed=np.array([[1.0, 0.0], [1.0, 0.0]]))
    assert np.all(np.isfinite(tape.grad(x)))


# ===== Convolution and upsampling =====

def test_conv2d_stride_shapes_and_divisibility():
    x = Tensor(np.ones((2, 8, 16, 3)))
    kernel = Tensor(np.ones((3, 3, 3, 5)))
    assert ops.conv2d(x, kernel, stride=4).shape == (2, 2, 4, 5)
    assert ops.conv2d(Tensor(np.ones((8, 16, 3))), kernel).shape == (8, 16, 5)
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(np.ones((1, 6, 16, 3))), kernel, stride=4)
    with pytest.raises(ShapeError):
        ops.conv2d(x, Tensor(np.ones((2, 2, 3, 5))))


def test_conv2d_identity_kernel():
    field = np.random.default_rng(0).standard_normal((1, 4, 4, 2))
    kernel = np.zeros((3, 3, 2, 2))
    kernel[1, 1] = np.eye(2)
    assert np.allclose(ops.conv2d(Tensor(field), Tensor(kernel)).data, field)


def test_upsample_nearest_repeats_cells():
    x = Tensor(np.arange(4.0).reshape(1, 2, 2, 1))
    out = ops.upsample_nearest(x, 2).data[0, ..., 0]
    assert out.tolist() == [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]]


def test_parameter_list_joins_slices():
    params = ParameterList([Parameter(np.zeros((3, 3, 2, 4))), Parameter(np.ones((3, 3, 1, 4)))], axis=2)
    assert params.joined().shape == (3, 3, 3, 4)
    assert params.joined_array()[..., 2, :].sum() == 36.0


# ===== Finite differences =====

@pytest.mark.parametrize("name,fn,shapes", [
    ("gelu", ops.gelu, [(3, 4)]),
    ("layer_norm", ops.layer_norm, [(3, 6), (6,), (6,)]),
    ("softmax", ops.softmax, [(2, 5)]),
    ("matmul_batched", ops.matmul, [(2, 3, 4), (2, 4, 2)]),
    ("conv2d_stride2", lambda x, k: ops.conv2d(x, k, stride=2), [(1, 4, 4, 2), (3, 3, 2, 3)]),
])
def test_gradients_match_finite_differences(name, fn, shapes):
    rng = np.random.default_rng(7)
    result = check_gradient(name, fn, [rng.standard_normal(s) for s in shapes], tolerance=1e-4)
    assert result.passed, result.describe()


def test_parameter_gradient_check_restores_values():
    rng = np.random.default_rng(2)
    layer = Linear(4, 3, rng, dtype=np.float64)
    before = [p.data.copy() for p in layer.parameters()]
    x = rng.standard_normal((5, 4))
    result = check_parameter_gradients("linear", lambda: ops.sum(ops.square(layer(x))), layer.parameters(),
                                       fraction=1.0, tolerance=1e-5)
    assert result.passed, result.describe()
    assert all(np.array_equal(a, p.data) for a, p in zip(before, layer.parameters()))


def test_relative_error_reports_worst_entry():
    err, at = relative_error(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.5, 3.0]))
    assert at == 1
    assert err == pytest.approx(0.5 / 3.0)


# ===== Cross-check against torch autograd =====

def test_conv2d_and_attention_gradients_match_torch():
    torch = pytest.importorskip("torch")
    rng = np.random.default_rng(11)
    x = rng.standard_normal((2, 8, 8, 3))
    kernel = rng.standard_normal((3, 3, 3, 4))
    weights = rng.standard_normal((2, 2, 2, 4))

    with Tape() as tape:
        tx, tk = Tensor(x, requires_grad=True), Tensor(kernel, requires_grad=True)
        out = ops.conv2d(tx, tk, stride=4)
        loss = ops.sum(ops.mul(out, Tensor(weights)))
    tape.backward(loss)

    px = torch.tensor(x.transpose(0, 3, 1, 2), requires_grad=True)
    pk = torch.tensor(kernel.transpose(3, 2, 0, 1), requires_grad=True)
    pout = torch.nn.functional.conv2d(px, pk, stride=4, padding=1)
    (pout * torch.tensor(weights.transpose(0, 3, 1, 2))).sum().backward()

    assert np.allclose(out.data, pout.detach().numpy().transpose(0, 2, 3, 1), atol=1e-10)
    assert np.allclose(tape.grad(tx), px.grad.numpy().transpose(0, 2, 3, 1), atol=1e-10)
    assert np.allclose(tape.grad(tk), pk.grad.numpy().transpose(2, 3, 1, 0), atol=1e-10)

    scores = rng.standard_normal((2, 3, 5))
    with Tape() as tape:
        ts = Tensor(scores, requires_grad=True)
        soft = ops.sum(ops.mul(ops.softmax(ts), Tensor(scores)))
    tape.backward(soft)
    ps = torch.tensor(scores, requires_grad=True)
    (torch.softmax(ps, dim=-1) * torch.tensor(scores)).sum().backward()
    assert np.allclose(tape.grad(ts), ps.grad.numpy(), atol=1e-12)
