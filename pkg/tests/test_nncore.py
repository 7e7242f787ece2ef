import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from knowrare.errors import ShapeMismatch
from knowrare.nncore import (
    AdamState,
    LrSchedule,
    adam_step,
    bce_multilabel,
    cross_entropy,
    grad_check,
    init_lstm,
    init_mlp,
    leaky_relu,
    load_tensors,
    logistic,
    lstm_backward,
    lstm_forward,
    lstm_step,
    lstm_step_backward,
    lstm_step_forward,
    mlp_forward,
    mse,
    save_tensors,
    softmax,
)

finite = st.floats(-50, 50, allow_nan=False)


def test_lstm_zero_params_give_zero_hidden():
    params = {"Wx": np.zeros((3, 8)), "Wh": np.zeros((2, 8)), "b": np.zeros(8)}
    h, c = lstm_step(params, np.array([[1.0, -2.0, 0.5]]), np.zeros((1, 2)), np.zeros((1, 2)))
    assert np.all(h == 0) and np.all(c == 0)


def test_lstm_saturated_forget_gate_keeps_cell():
    rng = np.random.default_rng(0)
    H = 3
    params = init_lstm(rng, 2, H)
    params["b"][H : 2 * H] = 50.0
    x, h0, c0 = rng.normal(size=(1, 2)), rng.normal(size=(1, H)), rng.normal(size=(1, H))
    z = x @ params["Wx"] + h0 @ params["Wh"] + params["b"]
    i, g = logistic(z[:, :H]), np.tanh(z[:, 2 * H : 3 * H])
    _, c = lstm_step(params, x, h0, c0)
    np.testing.assert_allclose(c, c0 + i * g, atol=1e-12)


def test_lstm_init_forget_bias_and_gate_layout():
    p = init_lstm(np.random.default_rng(0), 4, 5)
    assert p["Wx"].shape == (4, 20) and p["Wh"].shape == (5, 20)
    np.testing.assert_array_equal(p["b"], np.r_[np.zeros(5), np.ones(5), np.zeros(10)])


def test_lstm_unroll_matches_stepwise():
    rng = np.random.default_rng(1)
    p = init_lstm(rng, 3, 4)
    x = rng.normal(size=(2, 5, 3))
    hs, _ = lstm_forward(p, x)
    h, c = np.zeros((2, 4)), np.zeros((2, 4))
    for t in range(5):
        h, c = lstm_step(p, x[:, t], h, c)
        np.testing.assert_allclose(hs[:, t], h, atol=1e-14)


def test_lstm_step_gradients():
    rng = np.random.default_rng(2)
    p = {k: v + 0.3 * rng.normal(size=v.shape) for k, v in init_lstm(rng, 3, 4).items()}
    x, h0, c0 = rng.normal(size=(2, 3)), rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
    wh, wc = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))

    def f(params):
        h, c, cache = lstm_step_forward(params, x, h0, c0)
        grads = lstm_step_backward(params, cache, wh, wc)[3]
        return float((h * wh).sum() + (c * wc).sum()), grads
    assert grad_check(f, p) < 1e-6
    # state gradients
    state = {"x": x.copy(), "h": h0.copy(), "c": c0.copy()}

    def g(s):
        h, c, cache = lstm_step_forward(p, s["x"], s["h"], s["c"])
        dx, dh, dc, _ = lstm_step_backward(p, cache, wh, wc)
        return float((h * wh).sum() + (c * wc).sum()), {"x": dx, "h": dh, "c": dc}
    assert grad_check(g, state) < 1e-6


def test_lstm_shape_errors():
    p = init_lstm(np.random.default_rng(0), 3, 4)
    with pytest.raises(ShapeMismatch):
        lstm_forward(p, np.zeros((2, 5, 2)))
    with pytest.raises(ShapeMismatch):
        lstm_step(p, np.zeros((1, 3)), np.zeros((1, 3)), np.zeros((1, 4)))


def test_mlp_examples():
    assert leaky_relu(np.array(-1.0)) == pytest.approx(-0.01)
    p = init_mlp(np.random.default_rng(0), 3, 4, 2)
    p["W1"][:] = 0
    p["W2"][:] = 0
    p["b2"][:] = [0.5, -1.5]
    y, _ = mlp_forward(p, np.ones((4, 3)))
    np.testing.assert_array_equal(y, np.tile([0.5, -1.5], (4, 1)))
    with pytest.raises(ShapeMismatch):
        mlp_forward(p, np.ones((4, 2)))


def test_glorot_bounds():
    p = init_mlp(np.random.default_rng(0), 30, 20, 10)
    assert np.abs(p["W1"]).max() <= np.sqrt(6 / 50)
    assert np.abs(p["W2"]).max() <= np.sqrt(6 / 30)
    assert np.all(p["b1"] == 0)


def test_loss_examples():
    x = np.arange(6.0).reshape(2, 3)
    assert mse(x, x)[0] == 0.0
    assert cross_entropy(np.zeros((1, 3)), [1])[0] == pytest.approx(np.log(3), abs=1e-12)
    assert bce_multilabel(np.zeros((1, 4)), np.ones((1, 4)))[0] == pytest.approx(np.log(2), abs=1e-12)
    # weight scales the per-sample term
    assert cross_entropy(np.zeros((1, 3)), [1], 2.0)[0] == pytest.approx(2 * np.log(3))


def test_loss_clamps_log():
    value, grad = cross_entropy(np.array([[1000.0, -1000.0]]), [1])
    assert value == pytest.approx(-np.log(1e-12))
    assert np.all(grad == 0)
    value, _ = bce_multilabel(np.array([[-1000.0]]), np.array([[1.0]]))
    assert np.isfinite(value)


@pytest.mark.parametrize("kind", ["mse", "ce", "bce"])
def test_loss_gradients(kind):
    rng = np.random.default_rng(3)
    z = {"z": rng.normal(size=(4, 3))}
    target = rng.normal(size=(4, 3))
    labels = rng.integers(3, size=4)
    bits = rng.integers(2, size=(4, 3))
    w = rng.uniform(0.5, 2, size=4)

    def f(p):
        if kind == "mse":
            v, g = mse(p["z"], target)
        elif kind == "ce":
            v, g = cross_entropy(p["z"], labels, w)
        else:
            v, g = bce_multilabel(p["z"], bits, w)
        return v, {"z": g}
    assert grad_check(f, z) < 1e-7


def test_adam_first_step_and_zero_gradient():
    p = {"w": np.zeros(3)}
    adam_step(AdamState(), p, {"w": np.ones(3)}, 0.001)
    np.testing.assert_allclose(p["w"], -0.001, rtol=1e-6)
    q = {"w": np.array([1.0, 2.0])}
    state = AdamState()
    for _ in range(5):
        adam_step(state, q, {"w": np.zeros(2)}, 0.1)
    np.testing.assert_array_equal(q["w"], [1.0, 2.0])
    with pytest.raises(ShapeMismatch):
        adam_step(state, q, {"w": np.zeros(3)}, 0.1)


def test_adam_quadratic_trajectory():
    p = {"w": np.array([1.0])}
    state = AdamState()
    for step in range(500):
        adam_step(state, p, {"w": 2 * p["w"]}, 0.01)
        if abs(p["w"][0]) < 0.1:
            break
    assert abs(p["w"][0]) < 0.1 and step < 500


def test_lr_schedule():
    s = LrSchedule(1e-3)
    assert [s(e) for e in range(10)] == [1e-3] * 10
    assert s(10) == pytest.approx(0.95e-3)
    assert s(12) == pytest.approx(1e-3 * 0.95**3)


def test_grad_check_examples():
    assert grad_check(lambda p: (float(p["w"][0] ** 2), {"w": 2 * p["w"]}), {"w": np.array([3.0])}) < 1e-8
    a = np.array([1.0, -2.0, 0.5])
    assert grad_check(lambda p: (float(a @ p["w"]), {"w": a.copy()}), {"w": np.ones(3)}) < 1e-9
    # a wrong gradient is caught
    assert grad_check(lambda p: (float(p["w"][0] ** 2), {"w": 3 * p["w"]}), {"w": np.array([3.0])}) > 0.1


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=finite))
def test_softmax_and_logistic_ranges(z):
    np.testing.assert_allclose(softmax(z).sum(axis=1), 1.0, atol=1e-12)
    s = logistic(z / 5)
    assert np.all((s > 0) & (s < 1))


def test_forward_determinism():
    rng = np.random.default_rng(4)
    p = init_lstm(rng, 3, 4)
    x = rng.normal(size=(2, 6, 3))
    assert lstm_forward(p, x)[0].tobytes() == lstm_forward(p, x)[0].tobytes()


def test_lstm_backward_input_gradient():
    rng = np.random.default_rng(5)
    p = init_lstm(rng, 2, 3)
    up = rng.normal(size=(2, 4, 3))
    holder = {"x": rng.normal(size=(2, 4, 2))}

    def f(h):
        hs, cache = lstm_forward(p, h["x"])
        return float((hs * up).sum()), {"x": lstm_backward(p, cache, up)[0]}
    assert grad_check(f, holder) < 1e-6


def test_container_layout(tmp_path):
    path = tmp_path / "x.knwr"
    save_tensors(path, {"ab": np.array([[1.0, 2.0, 3.0]])})
    raw = path.read_bytes()
    assert raw[:4] == b"KNWR"
    assert struct.unpack("<I", raw[4:8])[0] == 1
    assert struct.unpack("<I", raw[8:12])[0] == 2 and raw[12:14] == b"ab"
    assert raw[14] == 0 and raw[15] == 2
    assert struct.unpack("<QQ", raw[16:32]) == (1, 3)
    assert np.frombuffer(raw[32:], "<f8").tolist() == [1.0, 2.0, 3.0]


def test_container_roundtrip_and_errors(tmp_path):
    rng = np.random.default_rng(6)
    tensors = {"w": rng.normal(size=(2, 3, 4)), "s": np.array(1.5), "e": np.empty((0,))}
    save_tensors(tmp_path / "t.knwr", tensors)
    back = load_tensors(tmp_path / "t.knwr")
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].tobytes() == np.asarray(tensors[k]).tobytes() and back[k].shape == np.shape(tensors[k])
    (tmp_path / "bad.knwr").write_bytes(b"NOPE\x01\x00\x00\x00")
    with pytest.raises(Exception):
        load_tensors(tmp_path / "bad.knwr")
