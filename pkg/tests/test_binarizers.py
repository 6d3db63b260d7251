import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gbmem.binarizers import (
    HeavisideProjection,
    RangeCalibration,
    ThermometerCodec,
    calibrate_range,
    heaviside_backward,
    heaviside_forward,
    init_projection,
    therm_decode,
    therm_encode,
    train_heaviside,
)
from gbmem.classifier import LinearClassifier, TrainConfig, evaluate
from gbmem.errors import EmptyInputError, ShapeError
from gbmem.datasets import LabeledEmbeddings
from gbmem.rng import SeededRng


def enc(z, p):
    return therm_encode(np.atleast_2d(z), None, p).to_array()


# -- calibration -------------------------------------------------------------


def test_calibrate_uniform_column():
    x = np.random.default_rng(0).uniform(0, 10, (10**4, 1))
    cal = calibrate_range(x)
    assert abs(cal.lo[0] - 0.1) <= 0.2 and abs(cal.hi[0] - 9.9) <= 0.2


def test_calibrate_constant_and_two_rows():
    cal = calibrate_range(np.full((5, 1), 3.0))
    assert (cal.lo[0], cal.hi[0]) == (3.0, 4.0)
    cal = calibrate_range(np.array([[0.0], [1.0]]))
    assert (cal.lo[0], cal.hi[0]) == (0.0, 1.0)


def test_calibrate_empty():
    with pytest.raises(EmptyInputError):
        calibrate_range(np.zeros((0, 3)))


# -- thermometer -------------------------------------------------------------


def test_encode_examples():
    assert enc([0.6], 4).tolist() == [[1, 1, 0, 0]]
    assert enc([1.0], 4).tolist() == [[1, 1, 1, 1]]
    cal = RangeCalibration([2.0], [5.0])
    assert therm_encode([[1.0]], cal, 4).to_array().tolist() == [[0, 0, 0, 0]]


def test_encode_feature_layout():
    # feature i occupies bits p*i .. p*i + p - 1
    assert enc([0.5, 0.0, 1.0], 2).tolist() == [[1, 0, 0, 0, 1, 1]]


def test_decode_examples():
    assert therm_decode([[1, 1, 0, 0]], 4).tolist() == [[0.5]]
    assert therm_decode([[1, 1, 1, 1]], 4).tolist() == [[1.0]]
    assert therm_decode([[1, 0, 1, 0]], 4).tolist() == [[0.5]]
    with pytest.raises(ShapeError):
        therm_decode([[1, 0, 1]], 2)


def test_encode_shape_error():
    with pytest.raises(ShapeError):
        therm_encode(np.zeros((2, 3)), RangeCalibration([0, 0], [1, 1]), 4)


@pytest.mark.parametrize("p", [1, 2, 4, 8])
def test_roundtrip_grid(p):
    z = np.linspace(0, 1, 10**4)[:, None]
    back = therm_decode(therm_encode(z, None, p), p)
    assert np.abs(back - z).max() <= 1 / p


@pytest.mark.parametrize("p", [1, 2, 3, 4, 5, 7, 8])
def test_monotone_valid_and_idempotent(p):
    z = np.sort(np.random.default_rng(p).random(2000))[:, None]
    codes = therm_encode(z, None, p).to_array().astype(int)
    assert np.all(np.diff(codes, axis=0) >= 0)  # bitwise monotone in z
    assert np.all(np.diff(codes, axis=1) <= 0)  # prefix of ones
    again = therm_encode(therm_decode(codes, p), None, p).to_array()
    np.testing.assert_array_equal(again, codes)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-2, 3), min_size=1, max_size=12), st.integers(1, 9))
def test_thermocode_properties(vals, p):
    codes = therm_encode(np.array([vals]), None, p).to_array().astype(int).reshape(len(vals), p)
    clipped = np.clip(vals, 0, 1)
    assert np.all(np.diff(codes, axis=1) <= 0)
    assert np.all(np.abs(codes.mean(axis=1) - clipped) <= 1 / p + 1e-12)


def test_codec_sidecar_roundtrip(tmp_path):
    x = np.random.default_rng(1).normal(size=(100, 3))
    codec = ThermometerCodec(4, calibrate_range(x))
    codec.save(tmp_path / "c.json")
    back = ThermometerCodec.load(tmp_path / "c.json")
    assert back.encode(x) == codec.encode(x) and back.width == 12


# -- heaviside ---------------------------------------------------------------


def test_forward_identity():
    proj = HeavisideProjection(np.eye(2), 1)
    assert heaviside_forward([[0.3, -0.2]], proj).to_array().tolist() == [[1, 0]]
    assert heaviside_forward([[0.0, -1e-300]], proj).to_array().tolist() == [[1, 0]]


def test_forward_positive_rescaling_invariant():
    g = np.random.default_rng(0)
    proj = HeavisideProjection(g.normal(size=(12, 6)), 2)
    x = g.normal(size=(40, 6))
    scale = g.uniform(0.1, 10, size=(12, 1))
    assert heaviside_forward(x, proj) == heaviside_forward(x, HeavisideProjection(proj.w * scale, 2))
    assert heaviside_forward(x, proj) == heaviside_forward(x, HeavisideProjection(proj.w * 7.5, 2))


def test_forward_shape_error():
    with pytest.raises(ShapeError):
        heaviside_forward(np.zeros((2, 3)), HeavisideProjection(np.eye(2), 1))


def test_backward_inside_window_is_linear():
    g = np.random.default_rng(1)
    w = g.normal(size=(6, 3)) * 0.1
    x = g.uniform(-1, 1, (5, 3))
    up = g.normal(size=(5, 6))
    gx, gw = heaviside_backward(up, x, HeavisideProjection(w, 2))
    np.testing.assert_allclose(gx, up @ w)
    np.testing.assert_allclose(gw, up.T @ x)


def test_backward_outside_window_is_zero():
    w = np.eye(2)
    x = np.array([[3.0, -4.0], [2.0, 5.0]])
    gx, gw = heaviside_backward(np.ones((2, 2)), x, HeavisideProjection(w, 1))
    assert not gx.any() and not gw.any()


@pytest.mark.parametrize("seed", range(5))
def test_backward_finite_differences(seed):
    g = np.random.default_rng(seed)
    d, f, n = 4, 2, 6
    proj = HeavisideProjection(g.normal(size=(f * d, d)) * 0.4, f)
    x = g.normal(size=(n, d))
    target = g.normal(size=(n, f * d))
    mask = np.abs(x @ proj.w.T) <= proj.ste_clip

    def loss(w, xx=x):
        s = (xx @ w.T) * mask  # step replaced by identity on the window
        return 0.5 * np.sum((s - target) ** 2)

    up = (x @ proj.w.T) * mask - target
    gx, gw = heaviside_backward(up, x, proj)
    h = 1e-6
    num_w = np.zeros_like(proj.w)
    for idx in np.ndindex(*proj.w.shape):
        wp, wm = proj.w.copy(), proj.w.copy()
        wp[idx] += h
        wm[idx] -= h
        num_w[idx] = (loss(wp) - loss(wm)) / (2 * h)
    num_x = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        num_x[idx] = (loss(proj.w, xp) - loss(proj.w, xm)) / (2 * h)
    np.testing.assert_allclose(gw, num_w, rtol=1e-5, atol=1e-8)
    np.testing.assert_allclose(gx, num_x, rtol=1e-5, atol=1e-8)


def blobs(n, d, seed):
    g = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    centers = g.normal(size=(2, d)) * 3
    return centers[y] + g.normal(size=(n, d)), y


def test_train_heaviside_separable():
    x, y = blobs(400, 8, 0)
    proj = init_projection(8, 2, SeededRng(0), scale=float(np.sqrt(np.mean(x**2))))
    head = LinearClassifier.zeros([0, 1], 16)
    hist = []
    proj, head = train_heaviside(x, y, proj, head, TrainConfig(epochs=50, batch_size=32), SeededRng(1), hist)
    acc = evaluate(head, LabeledEmbeddings(heaviside_forward(x, proj), y))
    assert acc >= 0.95
    assert hist[-1] <= hist[0]


def test_train_heaviside_zero_epochs_and_determinism():
    x, y = blobs(100, 8, 1)
    proj = init_projection(8, 2, SeededRng(0))
    head = LinearClassifier.zeros([0, 1], 16)
    same, _ = train_heaviside(x, y, proj, head, TrainConfig(epochs=0), SeededRng(0))
    assert same.w.tobytes() == proj.w.tobytes()
    a = train_heaviside(x, y, proj, head, TrainConfig(epochs=3), SeededRng(5))
    b = train_heaviside(x, y, proj, head, TrainConfig(epochs=3), SeededRng(5))
    assert a[0].w.tobytes() == b[0].w.tobytes() and a[1].w.tobytes() == b[1].w.tobytes()
