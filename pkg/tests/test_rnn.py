import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from rnncpsi.errors import InvalidInputError, RangeError, TrainingError, WeightFileError
from rnncpsi.rnn import (PiecewiseLinearActivation, RnnWeights, TrainConfig, activation_eval,
                         forward_batch, load_weights, loss_and_grads, make_activation, make_pl_tanh,
                         make_relu, random_weights, reference_weights, rnn_forward, rollout,
                         rollout_batch, save_weights, train_bptt, train_reference, training_windows)


def hand_forward(weights, window):
    """Straight-line recursion with python floats and the tanh-table lookup done by hand."""
    act = weights.activation
    knots = list(act.knots)
    d = weights.d_h
    h = [0.0] * d
    for x_t in window:
        new = []
        for u in range(d):
            pre = sum(weights.W_h[u, v] * h[v] for v in range(d)) + weights.W_x[u] * x_t + weights.W_b[u]
            k = sum(1 for kn in knots if kn < pre)
            new.append(act.slopes[k] * pre + act.intercepts[k])
        h = new
    return sum(weights.W_p[u] * h[u] for u in range(d))


def passthrough():
    return RnnWeights(W_h=[[0.0]], W_x=[1.0], W_b=[0.0], W_p=[1.0], activation=make_relu())


# -- activation --------------------------------------------------------------


def test_relu_examples():
    relu = make_relu()
    assert activation_eval(relu, -3.0) == (0.0, 0)
    assert activation_eval(relu, 2.0) == (2.0, 1)


def test_knot_ties_go_to_lower_piece():
    relu = make_relu()
    assert activation_eval(relu, 0.0) == (0.0, 0)
    t = make_pl_tanh(4.0, 4)
    assert t.piece_index(-2.0) == 1
    assert t.piece_index(np.nextafter(-2.0, 0.0)) == 2


def test_activation_rejects_non_finite_input():
    with pytest.raises(InvalidInputError):
        activation_eval(make_relu(), math.nan)


def test_pl_tanh_middle_value_at_zero():
    t = make_pl_tanh()
    value, piece = activation_eval(t, 0.0)
    assert value == 0.0
    assert t.knots[piece] == 0.0  # the piece ending at 0


def test_pl_tanh_four_segments():
    t = make_pl_tanh(4.0, 4)
    np.testing.assert_array_equal(t.knots, [-4.0, -2.0, 0.0, 2.0, 4.0])
    k = np.array([-4.0, -2.0, 0.0, 2.0])
    np.testing.assert_allclose(t.slopes[1:-1], (np.tanh(k + 2) - np.tanh(k)) / 2, rtol=0, atol=1e-15)
    assert t.slopes[0] == t.slopes[-1] == 0.0
    assert t(-10.0) == pytest.approx(-math.tanh(4.0), abs=1e-15)
    assert t(10.0) == pytest.approx(math.tanh(4.0), abs=1e-15)


def test_pl_tanh_512_close_to_tanh():
    t = make_pl_tanh()
    v = np.linspace(-4, 4, 200001)
    assert np.max(np.abs(t(v) - np.tanh(v))) < 1e-4


def test_pl_tanh_is_odd_and_monotone():
    t = make_pl_tanh(4.0, 64)
    v = np.linspace(-6, 6, 4001)
    np.testing.assert_array_equal(t(-v), -t(v))
    assert np.all(np.diff(t(v)) >= 0)
    assert np.all(t.slopes >= 0)


def test_continuity_validation():
    with pytest.raises(InvalidInputError):
        PiecewiseLinearActivation([0.0], [0.0, 1.0], [0.0, 1.0])
    with pytest.raises(InvalidInputError):
        PiecewiseLinearActivation([1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0])


def test_make_activation_specs():
    assert make_activation("relu").same_table(make_relu())
    assert make_activation("pl_tanh:2:8").same_table(make_pl_tanh(2.0, 8))
    with pytest.raises(InvalidInputError):
        make_activation("sigmoid")


# -- forward pass ------------------------------------------------------------


def test_zero_weights_predict_zero():
    z = np.zeros((3, 3))
    w = RnnWeights(W_h=z, W_x=np.zeros(3), W_b=np.zeros(3), W_p=np.zeros(3), activation=make_pl_tanh())
    pred, trace = rnn_forward(w, [1.0, -2.0, 5.0, 0.3])
    assert pred == 0.0
    assert np.all(trace == w.activation.piece_index(0.0))


def test_passthrough_predicts_last_input():
    pred, _ = rnn_forward(passthrough(), [0.5, -1.0, 3.0])
    assert pred == 3.0


@pytest.mark.parametrize("act", [make_relu(), make_pl_tanh()])
def test_forward_matches_hand_computation(act):
    rng = np.random.default_rng(11)
    w = random_weights(4, rng, activation=act, scale=0.9)
    for _ in range(5):
        window = rng.normal(0, 2, 10)
        pred, _ = rnn_forward(w, window)
        assert abs(pred - hand_forward(w, window)) <= 1e-12
        assert abs(forward_batch(w, window[None, :])[0] - pred) <= 1e-12


def test_trace_faithfulness():
    rng = np.random.default_rng(3)
    w = random_weights(5, rng, activation=make_pl_tanh(3.0, 16))
    window = rng.normal(0, 1.5, 8)
    _, trace = rnn_forward(w, window)
    h = np.zeros(5)
    for t, x_t in enumerate(window):
        pre = w.W_h @ h + w.W_x * x_t + w.W_b
        np.testing.assert_array_equal(w.activation.piece_index(pre), trace[t])
        h = w.activation(pre)


def test_forward_is_deterministic():
    rng = np.random.default_rng(4)
    w = random_weights(6, rng)
    window = rng.normal(size=10)
    a, ta = rnn_forward(w, window)
    b, tb = rnn_forward(w, window)
    assert a == b
    np.testing.assert_array_equal(ta, tb)


_LIN_W = random_weights(4, np.random.default_rng(8), activation=make_relu(), scale=0.6)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e-2, 1e-2), min_size=6, max_size=6),
       st.lists(st.floats(-1e-2, 1e-2), min_size=6, max_size=6))
def test_local_linearity(w1, w2):
    w1, w2 = np.array(w1), np.array(w2)
    outs = [rnn_forward(_LIN_W, v) for v in (w1, w2, w1 + w2, 0 * w1)]
    assume(all(np.array_equal(outs[0][1], o[1]) for o in outs))
    lhs = outs[0][0] + outs[1][0]
    rhs = outs[2][0] + outs[3][0]
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs))


def test_rollout_single_step_is_forward():
    rng = np.random.default_rng(5)
    w = random_weights(4, rng)
    x = rng.normal(size=20)
    pred, _ = rnn_forward(w, x[3:8])
    assert rollout(w, x, 8, 5, 1)[0] == pred


def test_rollout_passthrough_repeats_last_value():
    x = np.arange(12.0)
    np.testing.assert_array_equal(rollout(passthrough(), x, 6, 4, 5), np.full(5, 5.0))


def test_rollout_matches_chained_calls():
    rng = np.random.default_rng(6)
    w = random_weights(4, rng)
    x = rng.normal(size=30)
    win = list(x[6:16])
    manual = []
    for _ in range(3):
        p = hand_forward(w, win)
        manual.append(p)
        win = win[1:] + [p]
    np.testing.assert_allclose(rollout(w, x, 16, 10, 3), manual, rtol=0, atol=1e-12)


def test_rollout_range_errors():
    w = passthrough()
    x = np.zeros(10)
    with pytest.raises(RangeError):
        rollout(w, x, 2, 3, 2)
    with pytest.raises(RangeError):
        rollout(w, x, 9, 3, 2)


def test_rollout_batch_shape():
    w = passthrough()
    out = rollout_batch(w, np.zeros((2, 3, 4)), 5)
    assert out.shape == (2, 3, 5)


# -- training ----------------------------------------------------------------


def _fd_gradient(w, X, y, name, eps=1e-5):
    base = {k: np.array(getattr(w, k)) for k in ("W_h", "W_x", "W_b", "W_p")}
    grad = np.zeros_like(base[name])
    for idx in np.ndindex(grad.shape):
        vals = []
        for sign in (1, -1):
            p = {k: v.copy() for k, v in base.items()}
            p[name][idx] += sign * eps
            vals.append(loss_and_grads(RnnWeights(activation=w.activation, **p), X, y)[0])
        grad[idx] = (vals[0] - vals[1]) / (2 * eps)
    return grad


@pytest.mark.parametrize("act", [make_relu(), make_pl_tanh()])
def test_bptt_gradient_matches_finite_differences(act):
    rng = np.random.default_rng(7)
    w = random_weights(2, rng, activation=act, scale=1.0)
    X, y = training_windows([rng.normal(size=30)], 5)
    _, grads = loss_and_grads(w, X, y)
    for name in ("W_h", "W_x", "W_b", "W_p"):
        fd = _fd_gradient(w, X, y, name)
        np.testing.assert_allclose(grads[name], fd, rtol=1e-3, atol=1e-7)


def test_training_on_zero_sequences_predicts_zero():
    data = [np.zeros(40) for _ in range(4)]
    w = train_bptt(data, TrainConfig(d_h=4, window=5, epochs=300, learning_rate=0.05))
    assert abs(rnn_forward(w, np.zeros(5))[0]) < 0.1


def test_training_is_deterministic_and_returns_best():
    rng = np.random.default_rng(0)
    data = [rng.normal(size=50) for _ in range(6)]
    cfg = TrainConfig(d_h=3, window=5, epochs=60, seed=4)
    hist = []
    w1 = train_bptt(data, cfg, hist)
    w2 = train_bptt(data, cfg)
    assert w1.equals(w2)
    X, y = training_windows(data, 5)
    assert loss_and_grads(w1, X, y)[0] == min(hist)


def test_training_divergence_suggests_smaller_rate():
    rng = np.random.default_rng(0)
    data = [rng.normal(size=50) for _ in range(4)]
    with pytest.raises(TrainingError, match="smaller learning rate"):
        train_bptt(data, TrainConfig(d_h=4, window=5, epochs=50, learning_rate=1e3))


def test_reference_net_regenerates_exactly():
    assert train_reference(10).equals(reference_weights(10))


def test_unknown_reference_window():
    with pytest.raises(InvalidInputError):
        reference_weights(7)


# -- weight files ------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    w = random_weights(5, np.random.default_rng(9), window=10)
    path = tmp_path / "w.json"
    save_weights(w, path)
    back = load_weights(path)
    assert back.equals(w)
    assert back.d_h == 5 and back.window == 10


def test_truncated_file(tmp_path):
    w = random_weights(3, np.random.default_rng(1))
    path = tmp_path / "w.json"
    save_weights(w, path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(WeightFileError):
        load_weights(path)


def test_wrong_shape_names_field(tmp_path):
    w = random_weights(3, np.random.default_rng(1))
    path = tmp_path / "w.json"
    save_weights(w, path)
    d = json.loads(path.read_text())
    d["W_h"] = d["W_h"][:2]
    path.write_text(json.dumps(d))
    with pytest.raises(WeightFileError, match="W_h") as info:
        load_weights(path)
    assert info.value.field == "W_h"


def test_non_finite_entry_names_field(tmp_path):
    w = random_weights(2, np.random.default_rng(1))
    path = tmp_path / "w.json"
    save_weights(w, path)
    d = json.loads(path.read_text())
    d["W_b"][1] = float("nan")
    path.write_text(json.dumps(d))
    with pytest.raises(WeightFileError) as info:
        load_weights(path)
    assert info.value.field == "W_b"


def test_missing_file(tmp_path):
    with pytest.raises(WeightFileError):
        load_weights(tmp_path / "nope.json")
