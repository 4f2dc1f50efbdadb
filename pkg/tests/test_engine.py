import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rat.engine import (
    DenseLayer,
    EngineError,
    CheckpointError,
    MlpModel,
    SgdState,
    backward,
    forward,
    init_mlp,
    load_checkpoint,
    one_hot,
    predict,
    save_checkpoint,
    sgd_step,
    soft_cross_entropy,
)

from oracles import finite_difference_grads, grads_match, naive_forward, naive_soft_ce, random_soft_targets


def test_zero_weight_model_gives_zero_logits(rng):
    model = MlpModel([DenseLayer(np.zeros((3, 5), np.float32), np.zeros(3, np.float32), "identity")])
    assert np.all(forward(model, rng.random((4, 5)).astype(np.float32)) == 0)


def test_identity_layer():
    model = MlpModel([DenseLayer(np.eye(2, dtype=np.float32), np.zeros(2, np.float32), "identity")])
    np.testing.assert_array_equal(forward(model, np.array([[1.0, 2.0]], np.float32)), [[1.0, 2.0]])


def test_forward_matches_loop_oracle():
    rng = np.random.default_rng(5)
    model = init_mlp([6, 9, 7, 4], rng)
    for layer in model.layers:
        layer.bias[:] = rng.normal(size=layer.bias.shape)
    x = rng.random((5, 6)).astype(np.float32)
    np.testing.assert_allclose(forward(model, x), naive_forward(model, x), atol=1e-6, rtol=1e-6)


def test_forward_shape_error_names_layer(small_model):
    with pytest.raises(EngineError, match="layer 0"):
        forward(small_model, np.zeros((2, 5), np.float32))


def test_model_rejects_broken_chain():
    a = DenseLayer(np.zeros((4, 3), np.float32), np.zeros(4, np.float32))
    b = DenseLayer(np.zeros((2, 5), np.float32), np.zeros(2, np.float32), "identity")
    with pytest.raises(EngineError, match="layer 1"):
        MlpModel([a, b])
    with pytest.raises(EngineError, match="identity"):
        MlpModel([DenseLayer(np.zeros((2, 3), np.float32), np.zeros(2, np.float32), "relu")])


def test_predict_rows_and_ties():
    assert predict(np.array([[0.1, 0.9]])).tolist() == [1]
    assert predict(np.array([[0.5, 0.5]])).tolist() == [0]
    z = np.array([[3.0, 1.0, 2.0], [0.0, 0.0, 1.0], [2.0, 2.0, 2.0]])
    assert predict(z).tolist() == [0, 2, 0]


def test_cross_entropy_known_values():
    assert soft_cross_entropy(np.zeros((1, 2)), np.array([[1.0, 0.0]])) == pytest.approx(np.log(2))
    assert soft_cross_entropy(np.zeros((1, 10)), np.full((1, 10), 0.1)) == pytest.approx(np.log(10))


def test_cross_entropy_matches_unfused_oracle(rng):
    logits = rng.normal(size=(7, 5)).astype(np.float32) * 3
    targets = random_soft_targets(rng, 7, 5)
    assert soft_cross_entropy(logits, targets) == pytest.approx(naive_soft_ce(logits, targets), abs=1e-5)


def test_cross_entropy_is_stable_for_huge_logits():
    logits = np.array([[1000.0, -1000.0, 0.0]], np.float32)
    loss = soft_cross_entropy(logits, np.array([[0.0, 1.0, 0.0]]))
    assert np.isfinite(loss) and loss == pytest.approx(2000.0)


def test_cross_entropy_rejects_invalid_targets():
    with pytest.raises(EngineError):
        soft_cross_entropy(np.zeros((1, 3)), np.array([[0.5, 0.6, 0.0]]))
    with pytest.raises(EngineError):
        soft_cross_entropy(np.zeros((1, 3)), np.array([[1.5, -0.5, 0.0]]))


@settings(max_examples=50, deadline=None)
@given(
    st.integers(2, 6),
    st.integers(0, 2**32 - 1),
)
def test_cross_entropy_bounded_below_by_target_entropy(c, seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(3, c)) * 4
    targets = random_soft_targets(rng, 3, c)
    entropy = -(targets * np.log(targets)).sum(axis=1).mean()
    assert soft_cross_entropy(logits, targets) >= entropy - 1e-9
    # equality when the softmax reproduces the target
    assert soft_cross_entropy(np.log(targets), targets) == pytest.approx(entropy, abs=1e-9)


def test_bias_path_gradient_on_zero_input():
    rng = np.random.default_rng(3)
    model = init_mlp([3, 5, 2], rng, dtype=np.float64)
    for layer in model.layers:
        layer.bias[:] = rng.normal(size=layer.bias.shape)
    x = np.zeros((2, 3))
    t = random_soft_targets(rng, 2, 2)
    g = backward(model, x, t)
    ref_p, ref_x, kink = finite_difference_grads(model, x, t)
    assert not kink
    assert grads_match(g.input_grads, ref_x)
    for a, r in zip(g.param_grads, ref_p):
        assert grads_match(a, r)


def test_gradients_match_finite_differences_2_16_16_3():
    rng = np.random.default_rng(8)
    checked = 0
    while checked < 3:
        model = init_mlp([2, 16, 16, 3], rng)
        for layer in model.layers:
            layer.bias[:] = rng.normal(0, 0.1, size=layer.bias.shape)
        x = rng.random((4, 2)).astype(np.float32)
        t = random_soft_targets(rng, 4, 3)
        ref_p, ref_x, kink = finite_difference_grads(model, x, t)
        if kink:
            continue
        g = backward(model, x, t.astype(np.float32))
        for a, r in zip(g.param_grads, ref_p):
            assert grads_match(a, r)
        assert grads_match(g.input_grads, ref_x)
        checked += 1


def test_duplicating_batch_keeps_parameter_gradients(small_model, rng):
    x = rng.random((5, 4)).astype(np.float32)
    t = one_hot(rng.integers(0, 3, 5), 3)
    g1 = backward(small_model, x, t)
    g2 = backward(small_model, np.concatenate([x, x]), np.concatenate([t, t]))
    for a, b in zip(g1.param_grads, g2.param_grads):
        np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-7)
    assert g1.loss == pytest.approx(g2.loss)


def test_gradient_shapes_mirror_parameters(small_model, rng):
    x = rng.random((3, 4)).astype(np.float32)
    g = backward(small_model, x, one_hot([0, 1, 2], 3))
    assert [p.shape for p in g.param_grads] == [p.shape for p in small_model.parameters()]
    assert g.input_grads.shape == x.shape


def test_forward_is_deterministic(small_model, rng):
    x = rng.random((8, 4)).astype(np.float32)
    assert forward(small_model, x).tobytes() == forward(small_model.copy(), x.copy()).tobytes()


def _scalar_model(value):
    return MlpModel([DenseLayer(np.array([[value]], np.float64), np.zeros(1), "identity"),
                     DenseLayer(np.ones((2, 1)), np.zeros(2), "identity")])


def test_sgd_plain_step():
    model = _scalar_model(1.0)
    state = SgdState.for_model(model, 0.1, momentum=0.0, weight_decay=0.0)
    grads = [np.array([[2.0]]), np.zeros(1), np.zeros((2, 1)), np.zeros(2)]
    sgd_step(model, grads, state)
    assert model.layers[0].weights[0, 0] == pytest.approx(0.8)


def test_sgd_zero_gradient_is_noop(small_model):
    before = [p.copy() for p in small_model.parameters()]
    state = SgdState.for_model(small_model, 0.5, momentum=0.9, weight_decay=0.0)
    sgd_step(small_model, [np.zeros_like(p) for p in before], state)
    for a, b in zip(before, small_model.parameters()):
        np.testing.assert_array_equal(a, b)


def test_sgd_momentum_two_steps_matches_unrolled_recurrence():
    lr, mu, wd = 0.1, 0.9, 0.01
    p0, g1, g2 = 1.0, 0.5, -0.25
    # unrolled by hand: v1 = g1 + wd*p0; p1 = p0 - lr*v1; v2 = mu*v1 + g2 + wd*p1; p2 = p1 - lr*v2
    v1 = g1 + wd * p0
    p1 = p0 - lr * v1
    v2 = mu * v1 + g2 + wd * p1
    p2 = p1 - lr * v2
    model = _scalar_model(p0)
    state = SgdState.for_model(model, lr, mu, wd)
    zeros = [np.zeros(1), np.zeros((2, 1)), np.zeros(2)]
    sgd_step(model, [np.array([[g1]]), *zeros], state)
    sgd_step(model, [np.array([[g2]]), *zeros], state)
    assert model.layers[0].weights[0, 0] == pytest.approx(p2, abs=1e-12)


def test_sgd_rejects_nonfinite_gradient(small_model):
    state = SgdState.for_model(small_model, 0.1)
    grads = [np.zeros_like(p) for p in small_model.parameters()]
    grads[2][0, 0] = np.nan
    with pytest.raises(FloatingPointError, match="layer 1"):
        sgd_step(small_model, grads, state)


def test_checkpoint_round_trip(tmp_path, small_model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(small_model, path)
    raw = path.read_bytes()
    assert raw[:8] == b"RATCKPT1"
    assert int.from_bytes(raw[8:12], "little") == 3
    assert int.from_bytes(raw[12:16], "little") == 4  # first layer in-width
    loaded = load_checkpoint(path)
    for a, b in zip(small_model.parameters(), loaded.parameters()):
        np.testing.assert_array_equal(a, b)
    assert [l.activation for l in loaded.layers] == ["relu", "relu", "identity"]


def test_checkpoint_errors(tmp_path, small_model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(small_model, path)
    raw = path.read_bytes()
    (tmp_path / "v2.ckpt").write_bytes(b"RATCKPT2" + raw[8:])
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v2.ckpt")
    (tmp_path / "short.ckpt").write_bytes(raw[:-4])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "short.ckpt")
    (tmp_path / "junk.ckpt").write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "junk.ckpt")


def test_he_init_statistics():
    model = init_mlp([400, 300, 2], np.random.default_rng(0))
    w = model.layers[0].weights
    assert w.dtype == np.float32
    assert w.std() == pytest.approx(np.sqrt(2 / 400), rel=0.02)
    assert np.all(model.layers[0].bias == 0)
