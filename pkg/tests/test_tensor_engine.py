"""Tape semantics, optimizer behavior, and the checkpoint wire format."""

import numpy as np
import pytest

from crossdtr.errors import DataError, UsageError
from crossdtr.oracles import gradient_check
from crossdtr.tensor import (
    AdamState,
    Tape,
    Tensor,
    adamw_step,
    backward,
    dtype_scope,
    load_checkpoint,
    ops,
    save_checkpoint,
    zero_grads,
)
from crossdtr.tensor import ops


def test_backward_of_sum_is_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with Tape():
        loss = ops.sum_(x)
        backward(loss)
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_of_sum_of_squares_is_2x():
    x = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    with Tape():
        backward(ops.sum_(ops.mul(x, x)))
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_backward_rejects_non_scalar_loss():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape():
        y = ops.mul(x, x)
        with pytest.raises(UsageError):
            backward(y)


def test_backward_requires_a_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    y = ops.sum_(x)  # no active tape: nothing recorded
    with pytest.raises(UsageError):
        backward(y)


def test_tape_consumed_exactly_once():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape():
        loss = ops.sum_(ops.mul(x, x))
        backward(loss)
        with pytest.raises(UsageError):
            backward(loss)


def test_gradients_accumulate_across_forward_passes():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with Tape():
        backward(ops.sum_(ops.mul(x, x)))
    once = x.grad.copy()
    with Tape():
        backward(ops.sum_(ops.mul(x, x)))
    np.testing.assert_allclose(x.grad, 2 * once)
    zero_grads([x])
    assert x.grad is None


def test_intermediate_tensors_get_grads():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with Tape():
        y = ops.mul(x, x)
        backward(ops.sum_(y))
    np.testing.assert_array_equal(y.grad, np.ones(2))


def test_same_tensor_used_twice_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True)
    with Tape():
        backward(ops.sum_(ops.mul(x, x)))  # d/dx x^2 = 2x
    np.testing.assert_allclose(x.grad, [6.0])


def test_untracked_inputs_record_nothing():
    x = Tensor(np.ones(3), requires_grad=False)
    with Tape() as tape:
        ops.sum_(ops.mul(x, x))
        assert tape.nodes == []


# ---------------------------------------------------------------------------
# AdamW


def test_adamw_zero_grad_zero_decay_keeps_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    state = AdamState.init([p])
    before = p.data.copy()
    adamw_step([p], state, lr=0.1, weight_decay=0.0)
    np.testing.assert_array_equal(p.data, before)


def test_adamw_descends_on_quadratic():
    p = Tensor(np.array([1.0]), requires_grad=True)
    state = AdamState.init([p])
    with Tape():
        backward(ops.mul(ops.mul(p, p), 0.5))
    adamw_step([p], state, lr=0.05)
    assert abs(p.data[0]) < 1.0


def test_adamw_converges_on_convex_quadratic():
    # Closed-form optimum of 0.5 * ||w - target||^2 is w = target.
    target = np.array([3.0, -1.0, 0.5])
    w = Tensor(np.zeros(3), requires_grad=True)
    state = AdamState.init([w])
    for _ in range(200):
        zero_grads([w])
        with Tape():
            diff = ops.sub(w, Tensor(target))
            loss = ops.mul(ops.sum_(ops.mul(diff, diff)), 0.5)
            backward(loss)
        adamw_step([w], state, lr=0.05)
    final = 0.5 * np.sum((w.data - target) ** 2)
    assert final < 1e-4


def test_adamw_weight_decay_shrinks_params():
    p = Tensor(np.array([1.0]), requires_grad=True)
    state = AdamState.init([p])
    adamw_step([p], state, lr=0.1, weight_decay=0.5)
    assert p.data[0] == pytest.approx(1.0 - 0.1 * 0.5)


# ---------------------------------------------------------------------------
# checkpoint format


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "stem.w": rng.normal(size=(4, 3, 3, 3)).astype(np.float32),
        "head.b": rng.normal(size=(7,)).astype(np.float32),
        "scalar": np.float32(1.25).reshape(()),
    }
    path = tmp_path / "model.cdtr"
    save_checkpoint(path, tensors)
    loaded = load_checkpoint(path)
    assert list(loaded) == list(tensors)
    for name in tensors:
        assert loaded[name].dtype == np.float32
        np.testing.assert_array_equal(
            loaded[name].view(np.uint32), np.asarray(tensors[name]).view(np.uint32)
        )
    # Re-serializing the loaded dict must reproduce the file byte for byte.
    second = tmp_path / "model2.cdtr"
    save_checkpoint(second, loaded)
    assert second.read_bytes() == path.read_bytes()


def test_checkpoint_header_layout(tmp_path):
    path = tmp_path / "one.cdtr"
    save_checkpoint(path, {"a": np.zeros((2,), dtype=np.float32)})
    raw = path.read_bytes()
    assert raw[:4] == b"CDTR"
    assert int.from_bytes(raw[4:8], "little") == 1  # format version
    assert int.from_bytes(raw[8:12], "little") == 1  # tensor count
    assert int.from_bytes(raw[12:14], "little") == 1  # name length
    assert raw[14:15] == b"a"
    assert raw[15] == 1  # rank
    assert int.from_bytes(raw[16:20], "little") == 2  # dim


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.cdtr"
    path.write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_checkpoint_rejects_truncation(tmp_path):
    path = tmp_path / "trunc.cdtr"
    save_checkpoint(path, {"a": np.zeros((5,), dtype=np.float32)})
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_default_dtype_switch():
    x = Tensor(np.ones(2))
    assert x.data.dtype == np.float32
    with dtype_scope("float64"):
        y = Tensor(np.ones(2))
        assert y.data.dtype == np.float64
    assert Tensor(np.ones(2)).data.dtype == np.float32
