import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcovnet import _backend
from rcovnet.errors import ConfigError, EmptySplit, ShapeMismatch
from rcovnet.nn import (
    AdamState,
    CheckpointMismatch,
    ConvLstmForecaster,
    LayerKind,
    backward,
    LossConfig,
    ModelWeights,
    TrainConfig,
    adam_step,
    build_spec,
    conv2d_same,
    convlstm_step,
    count_params,
    djia_spec,
    feature_maps,
    forward,
    huber_loss,
    init_weights,
    l1_loss,
    l2_loss,
    load_checkpoint,
    save_checkpoint,
    simulation_spec,
    sp100_spec,
    train,
    value_and_grad,
)
from rcovnet.nn.losses import huber_grad
from rcovnet.transforms import RCovSeries, make_windows

# central differences at h = 1e-5 resolve gradients only down to about this size
FD_FLOOR = 1e-6


def fd_check(spec, w, x, y, cfg, h=1e-5):
    _, _, g = value_and_grad(spec, w, x, y, cfg)
    fd = np.empty_like(g)
    for k in range(len(g)):
        wp, wm = w.copy(), w.copy()
        wp.data[k] += h
        wm.data[k] -= h
        fd[k] = (value_and_grad(spec, wp, x, y, cfg)[1] - value_and_grad(spec, wm, x, y, cfg)[1]) / (2 * h)
    return np.max(np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), FD_FLOOR))


def toy_model(seed=0, d=4, m=3, peephole=False, channels=(3, 2, 1), kernels=(3, 3, 1)):
    spec = build_spec(d, m, channels, kernels, peephole=peephole)
    w = init_weights(spec, seed)
    rng = np.random.default_rng(seed)
    w["0.b"] = w["0.b"] + rng.uniform(-0.3, 0.3, w["0.b"].shape)
    if peephole:
        w["0.peep"] = rng.uniform(-0.5, 0.5, w["0.peep"].shape)
    return spec, w, rng


# -- spec and parameter counts -------------------------------------------------

def test_param_counts_match_published_tables():
    assert count_params(djia_spec())[0] == 1016
    assert count_params(sp100_spec())[0] == 34912
    assert count_params(simulation_spec())[0] == 3760


def test_total_count_adds_biases_and_peepholes():
    spec = djia_spec()
    assert count_params(spec)[1] == 1016 + 16 + 8 + 1
    assert count_params(djia_spec(use_bias=False)) == (1016, 1016)
    peep = djia_spec(peephole=True)
    assert count_params(peep) == (1016, 1016 + 25 + 3 * 4 * 25 * 25)
    assert len(init_weights(peep)) == count_params(peep)[1]


def test_spec_validation():
    with pytest.raises(ConfigError):
        build_spec(5, 3, (2, 1), (2, 1))
    with pytest.raises(ConfigError):
        build_spec(5, 3, (2, 2), (3, 1))
    with pytest.raises(ConfigError):
        build_spec(5, 3, (2,), (3,))


def test_spec_digest_roundtrip():
    spec = sp100_spec(peephole=True)
    from rcovnet.nn import ModelSpec
    again = ModelSpec.from_dict(spec.to_dict())
    assert again == spec and again.digest() == spec.digest()
    assert djia_spec().digest() != djia_spec(d=24).digest()


@pytest.mark.parametrize("make", [simulation_spec, djia_spec, sp100_spec])
def test_every_layer_preserves_spatial_size(make):
    spec = make(d=9, lag=2)
    w = init_weights(spec, 1)
    maps = feature_maps(spec, w, np.random.default_rng(0).normal(size=(2, 9, 9)))
    assert [m.shape for m in maps] == [(l.out_channels, 9, 9) for l in spec.layers]


def test_gate_views_share_storage():
    spec, w, _ = toy_model()
    views = w.gate_kernels()
    assert views["W_xi"].shape == (3, 1, 3, 3) and views["W_hf"].shape == (3, 3, 3, 3)
    views["W_ho"][...] = 7.0
    assert np.all(w["0.w"][9:, 1:] == 7.0)


# -- convolution -------------------------------------------------------------

def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(size=(3, 5, 5))
    np.testing.assert_array_equal(conv2d_same(x, np.eye(3)[:, :, None, None]), x)


def test_conv_all_ones_counts_window():
    out = conv2d_same(np.ones((1, 3, 3)), np.ones((1, 1, 3, 3)))[0]
    np.testing.assert_array_equal(out, [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


@pytest.mark.parametrize("backend", _backend.available())
def test_conv_matches_direct_correlation(backend):
    k = _backend.get(backend)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 6, 7))
    w = rng.normal(size=(4, 3, 5, 3))
    xp = np.pad(x, ((0, 0), (0, 0), (2, 2), (1, 1)))
    ref = np.zeros((2, 4, 6, 7))
    for i in range(6):
        for j in range(7):
            ref[:, :, i, j] = np.einsum("bckl,ockl->bo", xp[:, :, i:i + 5, j:j + 3], w)
    np.testing.assert_allclose(k.conv2d_forward(x, w), ref, atol=1e-12)


def test_conv_linearity():
    rng = np.random.default_rng(1)
    x, y, w = rng.normal(size=(2, 6, 6)), rng.normal(size=(2, 6, 6)), rng.normal(size=(3, 2, 3, 3))
    np.testing.assert_allclose(conv2d_same(2.5 * x - 1.5 * y, w),
                               2.5 * conv2d_same(x, w) - 1.5 * conv2d_same(y, w), atol=1e-12)


def test_conv_shape_errors():
    with pytest.raises(ShapeMismatch):
        conv2d_same(np.ones((2, 4, 4)), np.ones((1, 3, 3, 3)))
    with pytest.raises(ShapeMismatch):
        conv2d_same(np.ones((1, 4, 4)), np.ones((1, 1, 2, 2)))


@pytest.mark.parametrize("ks", [1, 3, 5])
def test_conv_backward_backends_agree(ks):
    if len(_backend.available()) < 2:
        pytest.skip("compiled kernels not built")
    rng = np.random.default_rng(ks)
    x, gy, w = rng.normal(size=(3, 2, 7, 7)), rng.normal(size=(3, 4, 7, 7)), rng.normal(size=(4, 2, ks, ks))
    c, p = _backend.get("cython"), _backend.get("python")
    np.testing.assert_allclose(c.conv2d_backward_input(gy, w), p.conv2d_backward_input(gy, w), atol=1e-12)
    np.testing.assert_allclose(c.conv2d_backward_weight(x, gy, ks, ks), p.conv2d_backward_weight(x, gy, ks, ks),
                               atol=1e-11)


@pytest.mark.parametrize("use_peep", [False, True])
def test_gate_kernels_backends_agree(use_peep):
    if len(_backend.available()) < 2:
        pytest.skip("compiled kernels not built")
    rng = np.random.default_rng(7)
    z, c, peep = 4 * rng.normal(size=(3, 8, 10)), rng.normal(size=(3, 2, 10)), rng.normal(size=(3, 2, 10))
    dh, dc = rng.normal(size=(3, 2, 10)), rng.normal(size=(3, 2, 10))
    out = {}
    for name in ("cython", "python"):
        k = _backend.get(name)
        act, cn, tc, h = k.lstm_gates_forward(z, c, peep, use_peep)
        gpeep = np.zeros_like(peep)
        dz, dcp = k.lstm_gates_backward(dh, dc, act, c, tc, peep, gpeep, use_peep)
        out[name] = (act, cn, tc, h, dz, dcp, gpeep)
    for a, b in zip(out["cython"], out["python"]):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


# -- ConvLSTM cell and forward --------------------------------------------------

def test_zero_weight_step():
    spec, _, rng = toy_model()
    w = ModelWeights(spec)
    c_prev = rng.normal(size=(3, 4, 4))
    h, c = convlstm_step(rng.normal(size=(1, 4, 4)), rng.normal(size=(3, 4, 4)), c_prev, w)
    np.testing.assert_allclose(c, 0.5 * c_prev, atol=1e-15)
    np.testing.assert_allclose(h, 0.5 * np.tanh(0.5 * c_prev), atol=1e-15)


def scalar_lstm(x, h, c, wx, wh, b):
    sig = lambda v: 1 / (1 + math.exp(-v))
    i = sig(wx[0] * x + wh[0] * h + b[0])
    f = sig(wx[1] * x + wh[1] * h + b[1])
    g = math.tanh(wx[2] * x + wh[2] * h + b[2])
    o = sig(wx[3] * x + wh[3] * h + b[3])
    c = f * c + i * g
    return o * math.tanh(c), c


def test_single_cell_matches_scalar_lstm():
    spec = build_spec(1, 1, (1, 1), (1, 1))
    w = ModelWeights(spec)
    wx, wh, b = [0.3, -0.7, 1.1, 0.4], [0.5, 0.2, -0.6, 0.9], [0.1, 1.0, -0.2, 0.05]
    w["0.w"] = np.array([[wx[k], wh[k]] for k in range(4)]).reshape(4, 2, 1, 1)
    w["0.b"] = b
    h, c = convlstm_step(np.full((1, 1, 1), 0.8), np.full((1, 1, 1), -0.3), np.full((1, 1, 1), 0.6), w)
    hh, cc = scalar_lstm(0.8, -0.3, 0.6, wx, wh, b)
    assert h[0, 0, 0] == pytest.approx(hh, abs=1e-12)
    assert c[0, 0, 0] == pytest.approx(cc, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.1, 50.0))
def test_hidden_state_bounded(seed, scale):
    spec, w, rng = toy_model(seed)
    w.data[:] *= scale
    h, c = convlstm_step(scale * rng.normal(size=(1, 4, 4)), rng.uniform(-1, 1, (3, 4, 4)),
                         scale * rng.normal(size=(3, 4, 4)), w)
    assert np.all(np.abs(h) <= 1.0)


def test_forward_feeds_oldest_day_first():
    # a model that copies the latest input: forget everything, input gate open
    spec = build_spec(3, 4, (1, 1), (1, 1))
    w = ModelWeights(spec)
    w["0.w"] = np.array([[0, 0], [0, 0], [1, 0], [0, 0]], dtype=float).reshape(4, 2, 1, 1)
    w["0.b"] = [50.0, -50.0, 0.0, 50.0]
    w["1.w"] = np.ones((1, 1, 1, 1))
    window = np.stack([np.full((3, 3), 0.1 * (k + 1)) for k in range(4)])  # slice 0 is the newest
    out = forward(spec, w, window)
    np.testing.assert_allclose(out, np.tanh(np.tanh(0.1)), atol=1e-12)


def test_forward_zero_weights_and_shapes():
    for spec in (djia_spec(lag=3), sp100_spec(lag=2)):
        x = np.random.default_rng(0).normal(size=(spec.lag, spec.d, spec.d))
        assert forward(spec, ModelWeights(spec), x).shape == (spec.d, spec.d)
        assert np.all(forward(spec, ModelWeights(spec), x) == 0.0)


def test_last_layer_is_linear():
    spec, w, rng = toy_model(2)
    x = rng.normal(size=(3, 4, 4))
    base = forward(spec, w, x)
    w2 = w.copy()
    w2["2.w"] = 2 * w["2.w"]
    w2["2.b"] = 2 * w["2.b"]
    np.testing.assert_allclose(forward(spec, w2, x), 2 * base, rtol=1e-14)


def test_forward_batch_matches_single():
    spec, w, rng = toy_model(4)
    x = rng.normal(size=(6, 3, 4, 4))
    batch = forward(spec, w, x, chunk=1)
    for b in range(6):
        np.testing.assert_allclose(batch[b], forward(spec, w, x[b]), atol=1e-13)


def test_forward_shape_error():
    spec, w, _ = toy_model()
    with pytest.raises(ShapeMismatch):
        forward(spec, w, np.zeros((4, 4, 4)))


# -- losses ------------------------------------------------------------------

def test_huber_scalar_examples():
    assert huber_loss(np.array([[0.5]]), np.zeros((1, 1)), 1.0, "cell-wise") == pytest.approx(0.125)
    assert huber_loss(np.array([[2.0]]), np.zeros((1, 1)), 1.0, "cell-wise") == pytest.approx(1.5)
    assert huber_loss(np.array([[0.5]]), np.zeros((1, 1)), 1.0) == pytest.approx(0.125)
    assert huber_loss(np.array([[2.0]]), np.zeros((1, 1)), 1.0) == pytest.approx(1.5)


def test_huber_matrix_norm_example():
    # errors (3, 4): e1 = 7 <= delta, so the loss is (9 + 16) / 2
    assert huber_loss(np.array([[3.0, 4.0]]), np.zeros((1, 2)), 100.0) == pytest.approx(12.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.01, 100.0), st.sampled_from(["matrix-norm", "cell-wise"]))
def test_losses_nonnegative_and_zero_at_target(seed, delta, mode):
    rng = np.random.default_rng(seed)
    p, t = rng.normal(size=(3, 4, 4)), rng.normal(size=(3, 4, 4))
    assert huber_loss(p, t, delta, mode) >= 0.0
    assert huber_loss(t, t, delta, mode) == 0.0
    assert l1_loss(p, t) >= 0.0 and l2_loss(p, t) >= 0.0
    assert l1_loss(t, t) == 0.0 and l2_loss(t, t) == 0.0


def test_huber_limits():
    rng = np.random.default_rng(0)
    p, t = rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 3))
    assert huber_loss(p, t, 1e9) == pytest.approx(l2_loss(p, t))
    assert huber_loss(p, t, 1e9, "cell-wise") == pytest.approx(l2_loss(p, t))
    np.testing.assert_allclose(huber_grad(p, t, 1e-9, "cell-wise"), 1e-9 * np.sign(p - t) / 2)


# -- gradients ---------------------------------------------------------------

def test_gradient_zero_for_zero_batch_and_weights():
    spec, _, _ = toy_model()
    w = ModelWeights(spec)
    _, _, g = value_and_grad(spec, w, np.zeros((2, 3, 4, 4)), np.zeros((2, 4, 4)), LossConfig(l1_lambda=0.1))
    assert np.all(g == 0.0)


def test_backward_is_the_objective_gradient():
    spec, w, rng = toy_model(seed=4)
    x, y = rng.normal(size=(3, 3, 4, 4)), rng.normal(size=(3, 4, 4))
    cfg = LossConfig("huber", 2.0, "cell-wise", 0.01)
    np.testing.assert_array_equal(backward(spec, w, x, y, cfg), value_and_grad(spec, w, x, y, cfg)[2])


def test_l1_penalty_gradient_is_sign_on_kernels():
    spec, w, rng = toy_model()
    x = rng.normal(size=(2, 3, 4, 4))
    w.data[:5] = 0.0
    y = forward(spec, w, x)  # zero data loss, so only the penalty remains in the gradient
    _, obj, g = value_and_grad(spec, w, x, y, LossConfig("l2", l1_lambda=0.3))
    mask = w.mask("kernel")
    np.testing.assert_allclose(g[mask], 0.3 * np.sign(w.data[mask]), atol=1e-15)
    assert np.all(g[~mask] == 0.0)
    assert np.all(g[:5] == 0.0)
    assert obj == pytest.approx(0.3 * np.abs(w.data[mask]).sum())


@pytest.mark.parametrize("peephole", [False, True])
@pytest.mark.parametrize("loss", [
    LossConfig("huber", 1e3, "matrix-norm"),   # quadratic branch
    LossConfig("huber", 1.0, "matrix-norm"),   # linear branch
    LossConfig("huber", 0.7, "cell-wise"),
    LossConfig("l1"),
    LossConfig("l2", l1_lambda=0.01),
])
def test_gradient_matches_finite_differences(peephole, loss):
    spec, w, rng = toy_model(0, peephole=peephole)
    x, y = rng.normal(size=(5, 3, 4, 4)), rng.normal(size=(5, 4, 4))
    assert fd_check(spec, w, x, y, loss) < 1e-4


@settings(max_examples=4, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 6), st.integers(1, 4), st.sampled_from([1, 3]))
def test_gradient_random_models(seed, d, m, k):
    spec, w, rng = toy_model(seed, d=d, m=m, channels=(2, 1), kernels=(k, 1))
    x, y = rng.normal(size=(3, m, d, d)), rng.normal(size=(3, d, d))
    # keep MatrixNorm away from its branch boundary
    e1 = np.abs(forward(spec, w, x) - y).sum(axis=(1, 2))
    delta = 10.0 * e1.max()
    assert fd_check(spec, w, x, y, LossConfig("huber", delta, "matrix-norm")) < 1e-4


def test_chunking_does_not_change_gradient():
    spec, w, rng = toy_model(5)
    x, y = rng.normal(size=(7, 3, 4, 4)), rng.normal(size=(7, 4, 4))
    a = value_and_grad(spec, w, x, y, LossConfig(), chunk=2)
    b = value_and_grad(spec, w, x, y, LossConfig(), chunk=7)
    assert a[0] == pytest.approx(b[0], rel=1e-13)
    np.testing.assert_allclose(a[2], b[2], rtol=1e-11, atol=1e-15)


# -- optimizer ----------------------------------------------------------------

def test_adam_first_step_moves_by_lr():
    p = np.array([1.0, -2.0, 3.0])
    g = np.array([0.5, -4.0, 1e-3])
    p, st_ = adam_step(p.copy(), g, AdamState.zeros(3), lr=1e-3)
    np.testing.assert_allclose(np.array([1.0, -2.0, 3.0]) - p, 1e-3 * np.sign(g), atol=1e-6)
    assert st_.t == 1


def test_adam_zero_gradient_is_noop():
    p = np.array([1.0, 2.0])
    out, _ = adam_step(p.copy(), np.zeros(2), AdamState.zeros(2), lr=0.1)
    np.testing.assert_array_equal(out, p)


def test_adam_coupled_weight_decay():
    p = np.array([2.0])
    a, _ = adam_step(p.copy(), np.zeros(1), AdamState.zeros(1), lr=0.1, weight_decay=0.5)
    b, _ = adam_step(p.copy(), np.array([1.0]), AdamState.zeros(1), lr=0.1)
    np.testing.assert_array_equal(a, b)


def test_adam_deterministic():
    rng = np.random.default_rng(0)
    gs = rng.normal(size=(10, 4))
    runs = []
    for _ in range(2):
        p, s = np.ones(4), AdamState.zeros(4)
        for g in gs:
            adam_step(p, g, s, 1e-2, weight_decay=1e-3)
        runs.append(p.copy())
    np.testing.assert_array_equal(runs[0], runs[1])


# -- training -----------------------------------------------------------------

def _toy_windows(T=60, d=4, seed=0, constant=False):
    rng = np.random.default_rng(seed)
    base = np.eye(d) + 0.3
    mats = []
    for t in range(T):
        if constant:
            mats.append(base)
        else:
            a = rng.normal(size=(d, d)) * 0.3
            mats.append(base + 0.5 * np.sin(t / 5) * np.eye(d) + a @ a.T)
    return RCovSeries(np.stack(mats))


def _small_setup(**cfg):
    series = _toy_windows()
    spec = build_spec(4, 3, (3, 2, 1), (3, 3, 1))
    ws = make_windows(series, "sqrt-cholesky", 3)
    tr = ws.restrict(range(3, 53))
    va = ws.restrict(range(53, 60))
    base = dict(lr=1e-2, batch_size=10, max_epochs=10, patience=50, l1_lambda=1e-4, huber_delta=300.0, seed=3)
    base.update(cfg)
    return spec, tr, va, TrainConfig(**base)


def test_training_loss_decreases():
    spec, tr, va, cfg = _small_setup()
    assert len(tr) == 50
    res = train(spec, tr, va, cfg)
    losses = [r.train_loss for r in res.history]
    upticks = sum(b > a for a, b in zip(losses, losses[1:]))
    assert upticks <= 1 and losses[-1] < losses[0]


def test_training_bit_reproducible():
    spec, tr, va, cfg = _small_setup(max_epochs=3)
    a, b = train(spec, tr, va, cfg), train(spec, tr, va, cfg)
    assert [(r.train_loss, r.val_rmse, r.val_mae) for r in a.history] == \
           [(r.train_loss, r.val_rmse, r.val_mae) for r in b.history]
    np.testing.assert_array_equal(a.weights.data, b.weights.data)


def test_training_keeps_best_validation_weights():
    spec, tr, va, cfg = _small_setup(lr=0.05, max_epochs=12)
    res = train(spec, tr, va, cfg)
    best = min(res.history, key=lambda r: r.val_rmse)
    assert res.best_epoch == best.epoch and res.best_val_rmse == best.val_rmse
    from rcovnet.nn.training import validation_scores
    assert validation_scores(spec, res.weights, va)[0] == pytest.approx(best.val_rmse, rel=1e-12)


def test_training_patience_stops_early():
    # updates of 1e-300 vanish in rounding, so validation never improves after epoch 1
    spec, tr, va, cfg = _small_setup(lr=1e-300, max_epochs=30, patience=2, l1_lambda=0.0, weight_decay=0.0)
    res = train(spec, tr, va, cfg)
    assert res.stopped_early and len(res.history) == 3 and res.best_epoch == 1


def test_constant_series_is_learned():
    series = _toy_windows(T=50, constant=True)
    spec = build_spec(4, 3, (3, 2, 1), (3, 3, 1))
    ws = make_windows(series, "none", 3)
    cfg = TrainConfig(lr=0.05, batch_size=8, max_epochs=400, patience=400, l1_lambda=0.0,
                      weight_decay=0.0, huber_delta=300.0, seed=1)
    res = train(spec, ws.restrict(range(3, 40)), ws.restrict(range(40, 50)), cfg)
    scale = np.sqrt(np.sum(series.matrices[0] ** 2))
    assert res.best_val_rmse < 1e-2 * scale


def test_training_empty_split():
    spec, tr, va, cfg = _small_setup()
    with pytest.raises(EmptySplit):
        train(spec, tr, va.restrict([]), cfg)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(beta1=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.0)


def test_forecaster_matches_forward():
    spec, w, rng = toy_model(1)
    series = _toy_windows(T=10)
    fc = ConvLstmForecaster(spec, w, "sqrt-cholesky")
    ws = make_windows(series, "sqrt-cholesky", 3)
    from rcovnet.transforms import inverse_transform
    expect = inverse_transform(forward(spec, w, ws.inputs([len(ws) - 1])[0]), "sqrt-cholesky")
    np.testing.assert_allclose(fc.predict(series.matrices[:-1]), expect, atol=1e-13)
    assert fc.params_label == str(count_params(spec)[0])


# -- checkpoints -------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    spec, w, _ = toy_model(peephole=True)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, w, {"epoch": 3})
    w2, meta = load_checkpoint(path, spec)
    np.testing.assert_array_equal(w2.data, w.data)
    assert meta == {"epoch": 3} and w2.spec == spec


def test_checkpoint_rejects_other_spec(tmp_path):
    spec, w, _ = toy_model()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, w)
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(path, build_spec(4, 3, (3, 2, 1), (3, 5, 1)))
