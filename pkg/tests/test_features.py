import json
import math
from pathlib import Path

import mpmath
import numpy as np
import pytest

from crnn.errors import UsageError
from crnn.features import (
    CnnTrainConfig,
    accuracy,
    cnn_extract,
    cnn_loss_and_grads,
    conv_pool_forward,
    cross_entropy,
    init_cnn,
    train_cnn,
)
from crnn.data import GLYPHS
from crnn.numerics import Rng
from crnn.train import relative_error

from oracles import numeric_grad

FIXTURES = Path(__file__).parent / "fixtures"


def zero_params(**kw):
    p = init_cnn(Rng(0), **kw)
    for v in p.tensors().values():
        v[...] = 0.0
    return p


def test_conv_pool_zero_input():
    W = Rng(1).uniform(-1, 1, (3, 1, 3, 3))
    out = conv_pool_forward(np.zeros((1, 6, 4)), W, np.zeros(3))
    assert out.shape == (3, 3, 2)
    assert not out.any()


def test_conv_pool_bias_only():
    out = conv_pool_forward(np.ones((1, 2, 2)), np.zeros((1, 1, 3, 3)), np.array([1.0]))
    assert out.shape == (1, 1, 1)
    assert out[0, 0, 0] == 1.0


def test_conv_pool_impulse_identity_kernel():
    x = np.zeros((1, 4, 4))
    x[0, 2, 1] = 0.7
    W = np.zeros((1, 1, 3, 3))
    W[0, 0, 1, 1] = 1.0
    out = conv_pool_forward(x, W, np.zeros(1))
    # 2x2 block maxima of the input, evaluated window by window
    expected = np.array([[[0.0, 0.0], [0.7, 0.0]]])
    np.testing.assert_array_equal(out, expected)


def test_conv_pool_zero_kernels_constant_maps():
    b = np.array([0.3, -0.2])
    out = conv_pool_forward(Rng(3).random((2, 8, 6)), np.zeros((2, 2, 3, 3)), b)
    np.testing.assert_array_equal(out[0], 0.3)
    np.testing.assert_array_equal(out[1], 0.0)


def test_odd_dims_floor():
    out = conv_pool_forward(np.ones((1, 8, 5)), np.zeros((1, 1, 3, 3)), np.ones(1))
    assert out.shape == (1, 4, 2)


def test_default_geometry():
    p = init_cnn(Rng(0))
    assert [W.shape[0] for W in p.conv_W] == [32, 32, 64]
    assert p.fc1_W.shape == (128, 64 * 4 * 2)
    assert p.fc2_W.shape == (10, 128)


def test_extract_trivial_cases():
    p = zero_params()
    np.testing.assert_array_equal(cnn_extract(np.zeros((32, 20)), p), np.zeros(128))
    p = init_cnn(Rng(4))
    v = np.abs(Rng(5).uniform(0, 1, 128))
    p.fc1_W[...] = 0.0
    p.fc1_b[...] = v
    np.testing.assert_array_equal(cnn_extract(Rng(6).random((32, 20)), p), v)


def test_extract_golden_vector():
    golden = json.loads((FIXTURES / "cnn_golden.json").read_text())
    p = init_cnn(Rng(golden["param_seed"]))
    f = cnn_extract(Rng(golden["frame_seed"]).random((32, 20)), p)
    np.testing.assert_allclose(f, golden["features"], rtol=0, atol=1e-12)


def test_extract_nonnegative_and_batched():
    p = init_cnn(Rng(8))
    frames = Rng(9).uniform(-1, 1, (7, 32, 20))
    feats = cnn_extract(frames, p, batch_size=3)
    assert feats.shape == (7, 128)
    assert np.all(feats >= 0)
    np.testing.assert_allclose(feats[4], cnn_extract(frames[4], p), atol=1e-13)


def test_cross_entropy():
    loss, grad = cross_entropy(np.full(10, 2.5), 3)
    assert loss == pytest.approx(math.log(10), abs=1e-14)
    with pytest.raises(UsageError):
        cross_entropy(np.zeros(10), 10)
    rng = Rng(11)
    for _ in range(20):
        logits = rng.uniform(-5, 5, 10)
        label = rng.integers(0, 10)
        _, g = cross_entropy(logits, label)
        assert abs(g.sum()) < 1e-12
        num = mp_central_difference(logits, label, 1e-6)
        errs = [relative_error(a, n, 1e-12) for a, n in zip(g, num)]
        assert max(errs) < 1e-6


def mp_central_difference(logits, label, eps):
    """Central differences of the cross-entropy evaluated at 50 significant digits."""
    mpmath.mp.dps = 50

    def loss(v):
        z = [mpmath.mpf(float(a)) for a in v]
        return mpmath.log(sum(mpmath.exp(a) for a in z)) - z[label]

    out = []
    for k in range(len(logits)):
        up, dn = list(logits), list(logits)
        up[k] = mpmath.mpf(float(up[k])) + eps
        dn[k] = mpmath.mpf(float(dn[k])) - eps
        out.append(float((loss(up) - loss(dn)) / (2 * eps)))
    return out


@pytest.mark.parametrize("seed", range(4))
def test_cnn_gradients_match_finite_differences(seed):
    rng = Rng(100 + seed)
    p = init_cnn(rng, in_channels=1, channels=(2, 2, 2), hidden=5, classes=10, input_hw=(8, 8))
    for v in p.tensors().values():
        v[...] = rng.uniform(-1, 1, v.shape)
    x = rng.uniform(-1, 1, (3, 1, 8, 8))
    y = rng.integers(0, 10, 3)
    _, grads = cnn_loss_and_grads(p, x, y)
    # float64 differences at eps=1e-6 are only good to ~1e-9 absolute
    floor = 1e-5
    worst = 0.0
    for name, w in p.tensors().items():
        num = numeric_grad(lambda: cnn_loss_and_grads(p, x, y)[0], w, 1e-6)
        for a, n in zip(grads[name].ravel(), num.ravel()):
            worst = max(worst, relative_error(a, n, floor))
    assert worst < 1e-4


def glyph_crops_10():
    frames = np.zeros((10, 32, 20))
    for d in range(10):
        frames[d, 4:28, 2:18] = GLYPHS[d]
    return frames, np.arange(10)


def test_train_overfits_ten_glyphs():
    frames, labels = glyph_crops_10()
    res = train_cnn(frames, labels, CnnTrainConfig(epochs=200, val_fraction=0.0, seed=1))
    assert accuracy(res.params, frames, labels) == 1.0


def test_zero_learning_rate_keeps_params():
    frames, labels = glyph_crops_10()
    init = init_cnn(Rng(3))
    res = train_cnn(frames, labels, CnnTrainConfig(lr=0.0, epochs=3, seed=2), init=init)
    for k, v in init.tensors().items():
        np.testing.assert_array_equal(res.params.tensors()[k], v)


def test_training_is_deterministic():
    frames, labels = glyph_crops_10()
    runs = [train_cnn(frames, labels, CnnTrainConfig(epochs=3, seed=4)).params for _ in range(2)]
    for k, v in runs[0].tensors().items():
        assert np.array_equal(v, runs[1].tensors()[k])


def test_loss_decreases_on_small_subset():
    rng = Rng(12)
    frames, labels = glyph_crops_10()
    idx = rng.integers(0, 10, 50)
    x = frames[idx] + rng.uniform(0, 0.2, (50, 32, 20))
    res = train_cnn(x, labels[idx], CnnTrainConfig(epochs=5, val_fraction=0.0, seed=5))
    losses = [h["loss"] for h in res.history]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_train_rejects_empty():
    with pytest.raises(UsageError):
        train_cnn(np.zeros((0, 32, 20)), np.zeros(0, dtype=int))
