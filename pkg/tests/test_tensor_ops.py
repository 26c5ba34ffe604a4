"""Per-operation checks: hand values plus finite-difference oracles (64-bit)."""

import math

import numpy as np
import pytest

from crossdtr import tensor as T
from crossdtr.errors import ConfigurationError, ShapeError
from crossdtr.oracles import gradient_check
from crossdtr.tensor import (
    AttentionProjections,
    Tape,
    Tensor,
    dtype_scope,
)
from crossdtr.tensor import ops


def ten(data, grad=True):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad, dtype=np.float64)


def test_matmul_identity():
    m = np.arange(9.0).reshape(3, 3)
    out = ops.matmul(Tensor(np.eye(3)), Tensor(m))
    np.testing.assert_array_equal(out.data, m)


def test_matmul_hand_case():
    out = ops.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[0.0], [1.0]]))
    np.testing.assert_allclose(out.data, [[2.0], [4.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_gradient_vs_finite_differences():
    rng = np.random.default_rng(7)
    with dtype_scope("float64"):
        a = ten(rng.normal(size=(4, 5)))
        b = ten(rng.normal(size=(5, 3)))
        err = gradient_check(lambda: ops.sum_(ops.matmul(a, b)), [a, b])
    assert err < 1e-4


def test_matmul_batched_broadcast_gradient():
    rng = np.random.default_rng(8)
    with dtype_scope("float64"):
        a = ten(rng.normal(size=(2, 3, 4)))
        b = ten(rng.normal(size=(4, 2)))  # broadcast over the batch dim
        err = gradient_check(lambda: ops.sum_(ops.matmul(a, b)), [a, b])
    assert err < 1e-4


def test_softmax_constant_vector():
    out = ops.softmax(Tensor([3.0, 3.0, 3.0, 3.0]), axis=-1)
    np.testing.assert_allclose(out.data, [0.25] * 4, atol=1e-7)


def test_softmax_hand_case():
    out = ops.softmax(Tensor([0.0, math.log(3.0)], dtype=np.float64), axis=-1)
    np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-12)


def test_softmax_sums_to_one():
    rng = np.random.default_rng(0)
    out = ops.softmax(Tensor(rng.normal(size=(5, 7)) * 20), axis=1)
    np.testing.assert_allclose(out.data.sum(axis=1), np.ones(5), atol=1e-6)


def test_softmax_jacobian_vs_finite_differences():
    rng = np.random.default_rng(11)
    with dtype_scope("float64"):
        x = ten(rng.normal(size=6))
        for j in range(6):
            pick = np.zeros(6)
            pick[j] = 1.0
            err = gradient_check(lambda: ops.sum_(ops.mul(ops.softmax(x, -1), Tensor(pick))), [x])
            assert err < 1e-4


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(1, 1, 5, 6)))
    k = Tensor(np.ones((1, 1, 1, 1)))
    out = ops.conv2d(x, k)
    np.testing.assert_allclose(out.data, x.data)


def test_conv2d_ones_kernel_center():
    x = Tensor(np.ones((1, 1, 5, 5)))
    k = Tensor(np.ones((1, 1, 3, 3)))
    out = ops.conv2d(x, k, stride=1, padding=1)
    assert out.shape == (1, 1, 5, 5)
    assert out.data[0, 0, 2, 2] == pytest.approx(9.0)


def test_conv2d_output_size_formula():
    x = Tensor(np.zeros((2, 3, 11, 9)))
    k = Tensor(np.zeros((4, 3, 3, 3)))
    out = ops.conv2d(x, k, stride=2, padding=1)
    assert out.shape == (2, 4, (11 + 2 - 3) // 2 + 1, (9 + 2 - 3) // 2 + 1)


def test_conv2d_kernel_larger_than_padded_input():
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))


def test_conv2d_gradient_vs_finite_differences():
    rng = np.random.default_rng(21)
    with dtype_scope("float64"):
        x = ten(rng.normal(size=(2, 2, 5, 4)))
        k = ten(rng.normal(size=(3, 2, 3, 3)))
        err = gradient_check(lambda: ops.sum_(ops.conv2d(x, k, stride=2, padding=1)), [x, k])
    assert err < 1e-4


def _attention_setup(rng, lq, lk, c):
    def w(shape):
        return ten(rng.normal(size=shape) * 0.5)

    proj = AttentionProjections(
        wq=w((c, c)), wk=w((c, c)), wv=w((c, c)), wo=w((c, c)),
        bq=w((c,)), bk=w((c,)), bv=w((c,)), bo=w((c,)),
    )
    q = ten(rng.normal(size=(lq, c)))
    k = ten(rng.normal(size=(lk, c)))
    v = ten(rng.normal(size=(lk, c)))
    return q, k, v, proj


def test_attention_single_key_returns_projected_value():
    rng = np.random.default_rng(5)
    with dtype_scope("float64"):
        q, k, v, proj = _attention_setup(rng, lq=3, lk=1, c=8)
        out = ops.multi_head_attention(q, k, v, heads=2, proj=proj)
        projected = (v.data @ proj.wv.data + proj.bv.data) @ proj.wo.data + proj.bo.data
    np.testing.assert_allclose(out.data, np.repeat(projected, 3, axis=0), atol=1e-10)


def test_attention_identical_keys_average_values():
    rng = np.random.default_rng(6)
    with dtype_scope("float64"):
        q, _, v, proj = _attention_setup(rng, lq=2, lk=4, c=8)
        k_row = rng.normal(size=8)
        k = ten(np.tile(k_row, (4, 1)))
        out = ops.multi_head_attention(q, k, v, heads=4, proj=proj)
        vp = v.data @ proj.wv.data + proj.bv.data
        expected = np.tile(vp.mean(axis=0) @ proj.wo.data + proj.bo.data, (2, 1))
    np.testing.assert_allclose(out.data, expected, atol=1e-10)


def test_attention_heads_must_divide_width():
    rng = np.random.default_rng(9)
    with dtype_scope("float64"):
        q, k, v, proj = _attention_setup(rng, lq=2, lk=2, c=8)
        with pytest.raises(ConfigurationError):
            ops.multi_head_attention(q, k, v, heads=3, proj=proj)


def test_attention_all_parameter_gradient_check():
    rng = np.random.default_rng(10)
    with dtype_scope("float64"):
        q, k, v, proj = _attention_setup(rng, lq=3, lk=4, c=8)
        params = [q, k, v] + proj.tensors()
        err = gradient_check(
            lambda: ops.sum_(ops.multi_head_attention(q, k, v, heads=2, proj=proj)), params
        )
    assert err < 1e-4


def test_layer_norm_constant_row_is_zero():
    x = Tensor(np.full((2, 6), 3.7))
    out = ops.layer_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6)))
    np.testing.assert_allclose(out.data, np.zeros((2, 6)), atol=1e-6)


def test_sigmoid_at_zero():
    assert ops.sigmoid(Tensor(0.0)).item() == pytest.approx(0.5)


def test_composite_mlp_gradient_check():
    rng = np.random.default_rng(12)
    with dtype_scope("float64"):
        x = ten(rng.normal(size=(4, 6)))
        w1, b1 = ten(rng.normal(size=(6, 10)) * 0.3), ten(np.zeros(10))
        w2, b2 = ten(rng.normal(size=(10, 3)) * 0.3), ten(np.zeros(3))
        gain, bias = ten(np.ones(10)), ten(np.zeros(10))

        def f():
            h = ops.gelu(ops.linear(x, w1, b1))
            h = ops.layer_norm(h, gain, bias)
            return ops.mean(ops.mul(ops.linear(h, w2, b2), ops.linear(h, w2, b2)))

        err = gradient_check(f, [x, w1, b1, w2, b2, gain, bias])
    assert err < 1e-4


ELEMENTWISE_CASES = {
    "add": lambda x: ops.add(x, 1.5),
    "mul": lambda x: ops.mul(x, x),
    "sub": lambda x: ops.sub(x, 0.3),
    "div": lambda x: ops.div(x, 2.0),
    "neg": ops.neg,
    "exp": ops.exp,
    "sigmoid": ops.sigmoid,
    "relu": ops.relu,
    "gelu": ops.gelu,
    "abs": ops.absolute,
    "clamp_min": lambda x: ops.clamp_min(x, 0.2),
    "powc": lambda x: ops.powc(ops.add(ops.mul(x, x), 1.0), -0.5),
    "log": lambda x: ops.log(ops.add(ops.mul(x, x), 1.0)),
    "reshape": lambda x: ops.reshape(x, (6, 2)),
    "transpose": lambda x: ops.transpose(x, (1, 0)),
    "slice": lambda x: ops.slice_axis(x, 1, 1, 3),
    "mean_axis": lambda x: ops.mean(x, axis=0),
    "sum_keepdims": lambda x: ops.sum_(x, axis=1, keepdims=True),
    "softmax": lambda x: ops.softmax(x, axis=-1),
}


@pytest.mark.parametrize("name", sorted(ELEMENTWISE_CASES))
def test_per_op_gradient_property(name):
    """Spec invariant: every differentiable op passes a 64-bit FD check."""
    rng = np.random.default_rng(hash(name) % 2**32)
    fn = ELEMENTWISE_CASES[name]
    with dtype_scope("float64"):
        x = ten(rng.normal(size=(3, 4)) * 0.7 + 0.1)
        err = gradient_check(lambda: ops.sum_(ops.mul(fn(x), fn(x))), [x])
    assert err < 1e-4, f"{name}: {err}"


def test_concat_gradient():
    rng = np.random.default_rng(13)
    with dtype_scope("float64"):
        a, b = ten(rng.normal(size=(2, 3))), ten(rng.normal(size=(4, 3)))
        err = gradient_check(lambda: ops.sum_(ops.mul(ops.concat([a, b], 0), ops.concat([a, b], 0))), [a, b])
    assert err < 1e-4


def test_ops_are_deterministic():
    rng = np.random.default_rng(14)
    x = rng.normal(size=(8, 8))
    k = rng.normal(size=(2, 1, 3, 3))
    first = ops.conv2d(Tensor(x[None, None]), Tensor(k), padding=1).data
    second = ops.conv2d(Tensor(x[None, None]), Tensor(k), padding=1).data
    np.testing.assert_array_equal(first, second)
    s1 = ops.softmax(Tensor(x), axis=0).data
    s2 = ops.softmax(Tensor(x), axis=0).data
    np.testing.assert_array_equal(s1, s2)
