import math

import numpy as np
import pytest

from smoothfat import autodiff as ad
from smoothfat.models import (CheckpointError, ModelSpec, build_model, flatten_params, forward,
                              load_checkpoint, predict, save_checkpoint, unflatten)

MLP = ModelSpec(kind="mlp", input_shape=(784,), num_classes=10, hidden=(256,))
CNN = ModelSpec(kind="cnn", input_shape=(1, 28, 28), num_classes=2)


def test_mlp_param_count():
    assert MLP.param_count() == 784 * 256 + 256 + 256 * 10 + 10 == 203_530
    assert build_model(MLP, 0).size == 203_530


def test_cnn_param_count():
    expected = 8 * 9 + 8 + 16 * 8 * 9 + 16 + 16 * 7 * 7 * 2 + 2
    assert CNN.param_count() == expected


@pytest.mark.parametrize("kwargs", [
    {"kind": "rnn"}, {"num_classes": 1}, {"hidden": (0,)}, {"input_shape": ()},
    {"kind": "cnn", "input_shape": (1, 30, 28)}, {"kind": "cnn", "input_shape": (784,)},
])
def test_invalid_spec(kwargs):
    with pytest.raises(ValueError):
        ModelSpec(**kwargs)


def test_init_deterministic_and_zero_bias():
    a, b = build_model(CNN, 7), build_model(CNN, 7)
    assert np.array_equal(a.flatten(), b.flatten())
    assert not np.array_equal(a.flatten(), build_model(CNN, 8).flatten())
    for name, arr in a.arrays.items():
        assert arr.dtype == np.float32
        if name.endswith(".b"):
            assert not arr.any()


def test_he_scale():
    w = build_model(MLP, 0).arrays["fc1.w"]
    assert w.std() == pytest.approx(math.sqrt(2 / 784), rel=0.02)


def test_flatten_round_trip(rng):
    v = rng.normal(size=CNN.param_count()).astype(np.float32)
    assert np.array_equal(flatten_params(unflatten(CNN, v)), v)
    p = build_model(CNN, 1)
    assert np.array_equal(unflatten(CNN, p.flatten()).flatten(), p.flatten())


def test_unflatten_wrong_length():
    with pytest.raises(ValueError, match="entries"):
        unflatten(CNN, np.zeros(CNN.param_count() + 1))


@pytest.mark.parametrize("spec", [MLP, CNN], ids=["mlp", "cnn"])
def test_zero_network_gives_log_k(spec, rng):
    params = unflatten(spec, np.zeros(spec.param_count()))
    x = rng.uniform(size=(3, *spec.input_shape)).astype(np.float32)
    logits = forward(params, x)
    assert not logits.data.any()
    loss = ad.softmax_cross_entropy(logits, np.zeros(3, dtype=int)).data
    np.testing.assert_allclose(loss, math.log(spec.num_classes), rtol=1e-6)


def test_identical_images_identical_rows(rng):
    params = build_model(CNN, 0)
    x = np.repeat(rng.uniform(size=(1, 1, 28, 28)).astype(np.float32), 5, axis=0)
    out = forward(params, x).data
    assert (out == out[0]).all()


def test_positive_scaling_keeps_argmax(rng):
    params = build_model(MLP, 2)
    x = rng.uniform(size=(20, 784)).astype(np.float32)
    before = predict(params, x)
    scaled = params.copy()
    for k in ("fc2.w", "fc2.b"):
        scaled.arrays[k] = scaled.arrays[k] * np.float32(3.5)
    assert np.array_equal(before, predict(scaled, x))


def test_forward_rejects_bad_inputs(rng):
    params = build_model(CNN, 0)
    with pytest.raises(ad.ShapeError):
        forward(params, np.zeros((2, 1, 28, 27), np.float32))
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        forward(params, np.full((2, 1, 28, 28), 1.5, np.float32))


def test_cnn_param_gradients_fd(rng):
    spec = ModelSpec(kind="cnn", input_shape=(1, 8, 8), num_classes=3, channels=(2, 3))
    params = build_model(spec, 0)
    params.arrays = {k: v.astype(np.float64) for k, v in params.arrays.items()}
    x, y = rng.uniform(size=(4, 1, 8, 8)), rng.integers(0, 3, size=4)
    for name in params.arrays:
        def loss(t, name=name):
            weights = {k: t if k == name else ad.Tensor(v) for k, v in params.arrays.items()}
            return ad.softmax_cross_entropy(forward(params, x, weights), y).mean()
        assert ad.finite_difference_check(loss, params.arrays[name]) < 1e-6, name


def test_checkpoint_round_trip(tmp_path):
    params = build_model(CNN, 4)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, params, seed=4, epoch=9, extra={"xi": 0.25})
    loaded, header = load_checkpoint(path)
    assert header["seed"] == 4 and header["epoch"] == 9 and header["xi"] == 0.25
    assert loaded.spec == CNN
    assert np.array_equal(loaded.flatten(), params.flatten())
    raw = path.read_bytes()
    assert raw[:8] == b"SFATCKPT"
    # payload is little-endian float32 after the header
    assert len(raw) - 12 - int.from_bytes(raw[8:12], "little") == 4 * CNN.param_count()


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXXXXXX" + b[8:],
    lambda b: b[:-3],
    lambda b: b[:10],
    lambda b: b + b"\0\0\0\0",
])
def test_checkpoint_corruption(tmp_path, mutate):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, build_model(CNN, 0))
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
