import numpy as np
import pytest
import torch

from quatmotion import nn
from quatmotion.nn import (
    Adam,
    Dense,
    GruLayer,
    GruStack,
    NonFiniteGradient,
    ParamStore,
    ShapeMismatch,
    backward,
    load_checkpoint,
    normalization_layer,
    rng_from_state,
    rng_state,
    save_checkpoint,
)
from quatmotion.quat import DegenerateQuaternion

from gradcheck import assert_gradients_match


def make_gru(input_size=5, hidden_size=7, seed=0):
    store = ParamStore()
    layer = GruLayer(store, "gru", input_size, hidden_size, np.random.default_rng(seed))
    return store, layer


def test_gru_zero_weights_halves_state():
    store, layer = make_gru()
    for _, p in store.items():
        with torch.no_grad():
            p.zero_()
    x = torch.randn(3, 5, dtype=torch.float64)
    h = torch.randn(3, 7, dtype=torch.float64)
    out = layer.step(x, h)
    assert torch.allclose(out, 0.5 * h)
    zero = layer.step(torch.zeros(3, 5, dtype=torch.float64), torch.zeros(3, 7, dtype=torch.float64))
    assert torch.allclose(zero, torch.zeros(3, 7, dtype=torch.float64))


def test_gru_gate_saturation_semantics():
    store, layer = make_gru(seed=3)
    x = torch.randn(2, 5, dtype=torch.float64)
    h = torch.randn(2, 7, dtype=torch.float64)
    with torch.no_grad():
        store["gru.bz"].fill_(-1e3)  # z -> 0: state passes through
    assert torch.allclose(layer.step(x, h), h)
    with torch.no_grad():
        store["gru.bz"].fill_(1e3)  # z -> 1: state replaced by candidate
    z_one = layer.step(x, h)
    r = torch.sigmoid(x @ store["gru.wr"] + h @ store["gru.ur"] + store["gru.br"])
    hc = torch.tanh(x @ store["gru.wh"] + (r * h) @ store["gru.uh"] + store["gru.bh"])
    assert torch.allclose(z_one, hc)


def test_gru_shape_mismatch():
    _, layer = make_gru()
    with pytest.raises(ShapeMismatch):
        layer.step(torch.zeros(1, 4, dtype=torch.float64), torch.zeros(1, 7, dtype=torch.float64))


def test_gru_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    for trial in range(4):
        store = ParamStore()
        layer = GruLayer(store, "g", 3, 4, np.random.default_rng(trial))
        x = torch.tensor(rng.normal(size=(2, 3)), requires_grad=True)
        h = torch.tensor(rng.normal(size=(2, 4)), requires_grad=True)
        weight = torch.tensor(rng.normal(size=(2, 4)))
        tensors = [x, h] + [p for _, p in store.items()]
        assert_gradients_match(lambda: (layer.step(x, h) * weight).sum(), tensors)


def test_dense_gradients_and_activation():
    rng = np.random.default_rng(8)
    store = ParamStore()
    layer = Dense(store, "d", 4, 3, np.random.default_rng(1), activation="leaky_relu", leak=0.05)
    x = torch.tensor(rng.normal(size=(5, 4)), requires_grad=True)
    weight = torch.tensor(rng.normal(size=(5, 3)))
    assert_gradients_match(lambda: (layer(x) * weight).sum(), [x, store["d.w"], store["d.b"]])
    with torch.no_grad():
        neg = layer(torch.full((1, 4), -100.0, dtype=torch.float64))
    manual = torch.full((1, 4), -100.0, dtype=torch.float64) @ store["d.w"] + store["d.b"]
    assert torch.allclose(neg, torch.where(manual > 0, manual, 0.05 * manual))


def test_normalization_layer():
    raw = torch.tensor([[2.0, 0.0, 0.0, 0.0], [0.0, 3.0, 0.0, 0.0]], dtype=torch.float64, requires_grad=True)
    unit, passthrough = normalization_layer(raw)
    assert passthrough is raw
    assert torch.allclose(unit, torch.tensor([[1.0, 0, 0, 0], [0.0, 1, 0, 0]], dtype=torch.float64))
    with pytest.raises(DegenerateQuaternion):
        normalization_layer(torch.zeros(1, 4, dtype=torch.float64))


def test_normalization_layer_gradients():
    rng = np.random.default_rng(13)
    raw = torch.tensor(rng.normal(size=(3, 4)) * 2.0, requires_grad=True)
    target = torch.tensor(rng.normal(size=(3, 4)))
    assert_gradients_match(lambda: ((normalization_layer(raw)[0] - target) ** 2).sum(), [raw])


def test_backward_contracts():
    store = ParamStore()
    p = store.add("theta", np.arange(4.0))
    backward(p.sum())
    assert np.allclose(p.grad.numpy(), 1.0)
    backward(p.sum())  # accumulation doubles
    assert np.allclose(p.grad.numpy(), 2.0)
    q = store.add("unused", np.zeros(3))
    assert np.allclose(store.grads()["unused"].numpy(), 0.0)
    with pytest.raises(ShapeMismatch):
        backward(p * 2)


def test_adam_first_step_sign_property():
    store = ParamStore()
    p = store.add("w", np.array([1.0]))
    opt = Adam(store, lr=1e-3, clip_norm=None)
    (p * 0.37).sum().backward()
    opt.step(epoch=0)
    assert p.detach().item() == pytest.approx(1.0 - 1e-3, abs=1e-9)


def test_adam_clips_global_norm_exactly():
    store = ParamStore()
    a = store.add("a", np.zeros(3))
    b = store.add("b", np.zeros(2))
    a.grad = torch.tensor([6.0, 0.0, 0.0], dtype=torch.float64)
    b.grad = torch.tensor([0.0, 8.0], dtype=torch.float64)  # total norm 10
    opt = Adam(store, lr=0.0, clip_norm=0.1)
    pre = opt.step(epoch=0)
    assert pre == pytest.approx(10.0)
    clipped = np.sqrt(sum(float((g**2).sum()) for g in [a.grad * 0.01, b.grad * 0.01]))
    assert abs(clipped - 0.1) < 1e-12


def test_adam_learning_rate_decay():
    store = ParamStore()
    store.add("w", np.zeros(1))
    opt = Adam(store, lr=1e-3, lr_decay=0.999)
    assert opt.effective_lr(100) == pytest.approx(1e-3 * 0.999**100, rel=1e-15)


def test_adam_zero_gradient_noop():
    store = ParamStore()
    p = store.add("w", np.array([2.0, -1.0]))
    opt = Adam(store)
    before = p.detach().numpy().copy()
    opt.step(epoch=0)
    assert np.array_equal(p.detach().numpy(), before)
    assert opt.t == 1


def test_adam_rejects_non_finite():
    store = ParamStore()
    p = store.add("w", np.zeros(2))
    p.grad = torch.tensor([np.nan, 1.0], dtype=torch.float64)
    opt = Adam(store)
    with pytest.raises(NonFiniteGradient) as err:
        opt.step()
    assert err.value.param == "w"


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(42)
    rng.normal(size=10)  # advance the stream before snapshotting
    header = {"kind": "test", "epoch": 3, "p": 0.985, "rng": rng_state(rng)}
    data_rng = np.random.default_rng(1)
    tensors = {
        "a": data_rng.normal(size=(2, 3)),
        "b": np.arange(5.0),
        "scalar": np.float64(7.5),
    }
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, header, tensors)
    header2, tensors2 = load_checkpoint(path)
    assert header2["epoch"] == 3 and header2["p"] == 0.985
    for k, v in tensors.items():
        assert np.array_equal(tensors2[k], np.asarray(v))
    resumed = rng_from_state(header2["rng"])
    assert np.array_equal(resumed.normal(size=4), rng.normal(size=4))


def test_gru_learns_sine_prediction():
    """Smoke test of the whole stack: next-value regression on a sine wave."""
    rng = np.random.default_rng(0)
    store = ParamStore()
    gru = GruStack(store, "gru", 1, 16, layers=1, rng=rng)
    head = Dense(store, "head", 16, 1, rng)
    t = np.arange(60) * 0.3
    series = torch.tensor(np.sin(t)[None, :, None])
    opt = Adam(store, lr=0.02, clip_norm=None, lr_decay=1.0)

    def run_loss():
        states = gru.initial_state(1)
        preds = []
        for i in range(series.shape[1] - 1):
            h, states = gru.step(series[:, i], states)
            preds.append(head(h))
        pred = torch.stack(preds, dim=1)
        return ((pred - series[:, 1:]) ** 2).mean()

    first = float(run_loss().detach())
    for epoch in range(200):
        store.zero_grad()
        loss = run_loss()
        backward(loss)
        opt.step(epoch)
    final = float(run_loss().detach())
    assert final < first / 10.0
