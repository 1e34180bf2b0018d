"""
Tests for the tape primitives and ParamStore.
"""

import numpy as np
import pytest

from shredlab import nn
from shredlab.errors import ConfigError, NumericalError, ShapeError, TapeError
from shredlab.nn import ParamStore, Tape, Var, constant


def test_affine_identity_and_bias():
    """Identity weights pass x through; a zero input returns the bias."""
    tape = Tape()
    x = Var(np.arange(6.0).reshape(2, 3))
    y = nn.affine(tape, x, Var(np.eye(3)), Var(np.zeros(3)))
    np.testing.assert_array_equal(y.value, x.value)

    b = np.array([0.5, -1.0])
    y = nn.affine(Tape(), Var(np.zeros((4, 3))), Var(np.ones((3, 2))), Var(b))
    np.testing.assert_array_equal(y.value, np.tile(b, (4, 1)))


def test_affine_shape_mismatch():
    """Mismatched inner dimensions raise ShapeError."""
    with pytest.raises(ShapeError, match="affine"):
        nn.affine(Tape(), Var(np.zeros((2, 3))), Var(np.zeros((4, 2))))


def test_affine_batched_gradient():
    """Weight gradients sum over every leading axis."""
    tape = Tape()
    x = Var(np.ones((2, 5, 3)))
    W = Var(np.zeros((3, 4)))
    b = Var(np.zeros(4))
    tape.backward(nn.affine(tape, x, W, b))
    np.testing.assert_array_equal(W.grad, np.full((3, 4), 10.0))
    np.testing.assert_array_equal(b.grad, np.full(4, 10.0))


def test_add_broadcast_gradient():
    """A broadcast operand receives the summed gradient."""
    tape = Tape()
    a = Var(np.zeros((2, 3)))
    b = Var(np.zeros(3))
    tape.backward(nn.add(tape, a, b))
    np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])
    np.testing.assert_array_equal(a.grad, np.ones((2, 3)))


def test_softmax_uniform_and_extreme():
    """Equal scores give uniform rows; [1000, 0] gives [1, 0] without overflow."""
    y = nn.row_softmax(Tape(), Var(np.full((2, 4), 3.7)))
    np.testing.assert_allclose(y.value, 0.25)

    with np.errstate(over="raise"):
        y = nn.row_softmax(Tape(), Var(np.array([1000.0, 0.0])))
    np.testing.assert_allclose(y.value, [1.0, 0.0])
    assert np.all(np.isfinite(y.value))


def test_softmax_mask():
    """Masked entries get zero weight."""
    mask = np.tril(np.ones((3, 3), dtype=bool))
    y = nn.row_softmax(Tape(), Var(np.zeros((3, 3))), mask=mask)
    np.testing.assert_allclose(y.value[0], [1.0, 0.0, 0.0])
    np.testing.assert_allclose(y.value[2], [1 / 3, 1 / 3, 1 / 3])


def test_softmax_nan():
    """NaN scores are a numerical failure."""
    with pytest.raises(NumericalError):
        nn.row_softmax(Tape(), Var(np.array([0.0, np.nan])))


def test_layer_norm_closed_form():
    """LayerNorm of [1, 2, 3] with unit gain is (x - 2) / sqrt(2/3 + eps)."""
    x = Var(np.array([1.0, 2.0, 3.0]))
    y = nn.layer_norm(Tape(), x, Var(np.ones(3)), Var(np.zeros(3)))
    expected = (x.value - 2.0) / np.sqrt(2.0 / 3.0 + nn.LAYER_NORM_EPS)
    np.testing.assert_allclose(y.value, expected, rtol=1e-12)


def test_layer_norm_gain_bias():
    """Gain and bias are applied after normalization."""
    x = Var(np.array([[4.0, 4.0]]))
    y = nn.layer_norm(Tape(), x, Var(np.array([2.0, 2.0])), Var(np.array([1.0, -1.0])))
    np.testing.assert_allclose(y.value, [[1.0, -1.0]])


def test_activations():
    """relu, sigmoid and tanh values, including saturated sigmoid inputs."""
    x = Var(np.array([-1000.0, -1.0, 0.0, 2.0, 1000.0]))
    np.testing.assert_array_equal(nn.relu(Tape(), x).value, [0.0, 0.0, 0.0, 2.0, 1000.0])
    s = nn.sigmoid(Tape(), x).value
    np.testing.assert_allclose(s, [0.0, 1 / (1 + np.e), 0.5, 1 / (1 + np.exp(-2.0)), 1.0])
    np.testing.assert_allclose(nn.tanh(Tape(), x).value, np.tanh(x.value))


def test_backward_twice():
    """A tape can run backward only once."""
    tape = Tape()
    x = Var(np.ones(3))
    y = nn.tanh(tape, x)
    tape.backward(y)
    with pytest.raises(TapeError):
        tape.backward(y)
    with pytest.raises(TapeError):
        nn.tanh(tape, x)


def test_constants_record_nothing():
    """Ops on constants only are not recorded and get no gradient."""
    tape = Tape()
    c = constant(np.ones(3))
    y = nn.tanh(tape, c)
    assert len(tape) == 0
    assert not y.requires_grad
    assert c.grad is None


def test_concat_stack_getitem_gradients():
    """Shape ops route gradients back to their sources."""
    tape = Tape()
    a, b = Var(np.zeros((2, 1))), Var(np.zeros((2, 2)))
    cat = nn.concat(tape, [a, b], axis=-1)
    picked = nn.getitem(tape, nn.stack(tape, [cat, cat], axis=0), (0, slice(None), slice(1, 3)))
    tape.backward(picked)
    np.testing.assert_array_equal(a.grad, np.zeros((2, 1)))
    np.testing.assert_array_equal(b.grad, np.ones((2, 2)))


def test_conv_transpose_single_pixel():
    """A one-pixel input with padding 0 reproduces the kernel."""
    kernel = np.arange(16.0).reshape(4, 4)
    x = Var(np.ones((1, 1, 1, 1)))
    w = Var(kernel.reshape(1, 1, 4, 4))
    y = nn.conv_transpose2d(Tape(), x, w, None, stride=2, padding=0)
    np.testing.assert_array_equal(y.value[0, 0], kernel)


def test_conv_transpose_doubles_size():
    """Stride 2, kernel 4, padding 1 maps H x W to 2H x 2W."""
    y = nn.conv_transpose2d(Tape(), Var(np.zeros((2, 3, 4, 5))), Var(np.zeros((3, 6, 4, 4))),
                            Var(np.ones(6)), stride=2, padding=1)
    assert y.shape == (2, 6, 8, 10)
    np.testing.assert_array_equal(y.value, 1.0)


def test_masked_mse():
    """Only mask-selected columns count, and the mean is over selected entries."""
    pred = Var(np.array([[1.0, 5.0, 3.0], [1.0, 9.0, 3.0]]))
    target = np.zeros((2, 3))
    loss = nn.masked_mse(Tape(), pred, target, mask=np.array([True, False, True]))
    assert float(loss.value) == pytest.approx((1 + 9 + 1 + 9) / 4)
    with pytest.raises(ConfigError):
        nn.masked_mse(Tape(), pred, target, mask=np.zeros(3, dtype=bool))


def test_param_store_init():
    """Weights start within +-1/sqrt(fan_in), biases at zero, gains at one."""
    store = ParamStore(init_seed=3)
    W = store.uniform("W", (16, 8), fan_in=16)
    store.zeros("b", (8,))
    store.ones("g", (8,))
    assert np.abs(W.value).max() <= 0.25
    assert store.n_params == 16 * 8 + 16
    np.testing.assert_array_equal(store["b"].value, 0.0)
    np.testing.assert_array_equal(store["g"].value, 1.0)
    with pytest.raises(ConfigError, match="duplicate"):
        store.zeros("b", (8,))
    again = ParamStore(init_seed=3)
    np.testing.assert_array_equal(again.uniform("W", (16, 8), fan_in=16).value, W.value)


def test_masked_param_gradient():
    """Masked entries read as zero and receive zero gradient."""
    store = ParamStore()
    store.add("xi", np.ones((2, 2)))
    store.set_mask("xi", np.array([[True, False], [False, True]]))
    tape = Tape()
    xi = store.masked(tape, "xi")
    np.testing.assert_array_equal(xi.value, np.eye(2))
    tape.backward(xi)
    np.testing.assert_array_equal(store["xi"].grad, np.eye(2))
    store.apply_masks()
    np.testing.assert_array_equal(store["xi"].value, np.eye(2))


def test_group_short_names():
    """group returns direct children only, keyed by short name."""
    store = ParamStore()
    store.zeros("enc.W", (2, 2))
    store.zeros("enc.b", (2,))
    store.zeros("enc.sub.W", (2, 2))
    assert sorted(store.group(Tape(), "enc")) == ["W", "b"]


def test_checkpoint_bytes():
    """Checkpoint bytes restore values and masks and have the documented size."""
    store = ParamStore(init_seed=1)
    store.uniform("a", (3, 4), fan_in=3)
    store.zeros("b", (4,))
    store.set_mask("a", np.arange(12).reshape(3, 4) % 2 == 0)
    store.apply_masks()
    data = store.to_bytes(extra={"note": "x"})

    manifest, offset = ParamStore.read_manifest(data)
    assert manifest["names"] == ["a", "b"]
    assert manifest["masks"] == ["a"]
    assert manifest["extra"] == {"note": "x"}
    assert len(data) == offset + 16 * 8 + 12

    other = ParamStore(init_seed=1)
    other.zeros("a", (3, 4))
    other.zeros("b", (4,))
    other.load_bytes(data)
    np.testing.assert_array_equal(other["a"].value, store["a"].value)
    np.testing.assert_array_equal(other.mask("a"), store.mask("a"))
    assert other.to_bytes(extra={"note": "x"}) == data


def test_checkpoint_errors():
    """Bad magic and truncated payloads are rejected."""
    store = ParamStore()
    store.zeros("a", (3,))
    data = store.to_bytes()
    with pytest.raises(ConfigError, match="magic"):
        store.load_bytes(b"XXXX" + data[4:])
    with pytest.raises(ConfigError):
        store.load_bytes(data[:-4])
    with pytest.raises(ConfigError):
        store.load_bytes(data + b"\x00")


if __name__ == "__main__":
    pytest.main(["-v", __file__])
