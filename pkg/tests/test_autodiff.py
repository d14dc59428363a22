import numpy as np
import pytest

from strokesight import autodiff as ad


def test_backward_sum_grad_ones():
    x = ad.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    ad.backward(ad.sum_all(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_sum_of_squares():
    x = ad.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    ad.backward(ad.sum_all(ad.mul(x, x)))
    np.testing.assert_allclose(x.grad, [2.0, 4.0])


def test_backward_twice_raises():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    loss = ad.sum_all(x)
    ad.backward(loss)
    with pytest.raises(RuntimeError):
        ad.backward(loss)


def test_backward_requires_scalar():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ad.backward(ad.mul(x, 2.0))


def test_closed_forms():
    assert float(ad.sigmoid(ad.Tensor(0.0)).data) == 0.5
    assert float(ad.tanh(ad.Tensor(0.0)).data) == 0.0
    np.testing.assert_allclose(
        ad.softmax(ad.Tensor(np.zeros((1, 3)))).data, [[1 / 3] * 3])


def test_softmax_simplex_property():
    rng = np.random.default_rng(0)
    for _ in range(50):
        y = ad.softmax(ad.Tensor(rng.normal(0, 5, size=(4, 7)))).data
        np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(y > 0)


def test_shape_mismatch_raises():
    a = ad.Tensor(np.ones((2, 3)))
    b = ad.Tensor(np.ones((4, 2)))
    with pytest.raises(ValueError):
        ad.matmul(a, b)
    with pytest.raises(ValueError):
        ad.add(a, ad.Tensor(np.ones((3, 2))))
    with pytest.raises(ValueError):
        ad.mul(a, ad.Tensor(np.ones(2)))


def test_dilated_conv_delta_kernel_identity():
    rng = np.random.default_rng(1)
    x = ad.Tensor(rng.normal(size=(2, 1, 12)))
    w = ad.Tensor(np.array([[[1.0, 0.0, 0.0]]]))
    for d in (1, 2, 3):
        y = ad.dilated_conv1d(x, w, dilation=d, padding="causal")
        np.testing.assert_allclose(y.data, x.data)


def test_dilated_conv_same_padding_keeps_length():
    x = ad.Tensor(np.random.default_rng(2).normal(size=(1, 4, 32)))
    w = ad.Tensor(np.random.default_rng(3).normal(size=(6, 4, 3)))
    for d in (1, 2):
        assert ad.dilated_conv1d(x, w, dilation=d, padding="same").shape == (1, 6, 32)


@pytest.mark.parametrize("seed", range(100))
def test_every_op_matches_finite_differences(seed):
    """Reverse-mode gradients match central differences on random inputs."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 2))
    b = rng.normal(size=(2,))
    cx = rng.normal(size=(2, 3, 8))
    cw = rng.normal(size=(5, 3, 3))
    cb = rng.normal(size=(5,))

    builders = {
        "matmul_add_sigmoid": (
            lambda t: ad.mean_all(ad.sigmoid(ad.add(ad.matmul(t["x"], t["w"]), t["b"]))),
            {"x": x, "w": w, "b": b}),
        "tanh_mul": (
            lambda t: ad.sum_all(ad.mul(ad.tanh(t["x"]), t["x"])), {"x": x}),
        "relu_softmax": (
            lambda t: ad.mean_all(ad.mul(ad.softmax(ad.relu(t["x"])),
                                         ad.softmax(ad.relu(t["x"])))),
            {"x": x + 0.7}),
        "log_slice_concat": (
            lambda t: ad.sum_all(ad.log(ad.add(ad.mul(
                ad.concat([ad.slice_(t["x"], (slice(None), slice(0, 2))),
                           ad.slice_(t["x"], (slice(None), slice(2, 4)))], axis=1),
                ad.concat([ad.slice_(t["x"], (slice(None), slice(0, 2))),
                           ad.slice_(t["x"], (slice(None), slice(2, 4)))], axis=1)), 1.0))),
            {"x": x}),
        "conv_causal": (
            lambda t: ad.mean_all(ad.mul(
                ad.dilated_conv1d(t["cx"], t["cw"], t["cb"], dilation=2, padding="causal"),
                ad.dilated_conv1d(t["cx"], t["cw"], t["cb"], dilation=2, padding="causal"))),
            {"cx": cx, "cw": cw, "cb": cb}),
        "conv_same_mean_axis": (
            lambda t: ad.sum_all(ad.mean_over_axis(
                ad.dilated_conv1d(t["cx"], t["cw"], t["cb"], dilation=1, padding="same"),
                axis=2)),
            {"cx": cx, "cw": cw, "cb": cb}),
    }
    name = list(builders)[seed % len(builders)]
    build, params = builders[name]
    report = ad.grad_check(build, params, seed=seed)
    assert max(report.values()) < 1e-4, (name, report)


def test_grad_check_exact_for_linear():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(5, 3))

    def build(t):
        return ad.sum_all(ad.matmul(ad.Tensor(x), t["w"]))

    report = ad.grad_check(build, {"w": rng.normal(size=(3, 2))})
    assert report["w"] < 1e-10


def test_losses_match_finite_differences():
    rng = np.random.default_rng(11)
    logits = rng.normal(size=(6, 3))
    onehot = np.eye(3)[rng.integers(0, 3, 6)]
    rep = ad.grad_check(lambda t: ad.softmax_cross_entropy(t["l"], onehot),
                        {"l": logits})
    assert rep["l"] < 1e-6
    targets = rng.integers(0, 2, size=(6, 1)).astype(float)
    rep = ad.grad_check(lambda t: ad.bce_with_logits(t["l"], targets),
                        {"l": logits[:, :1]})
    assert rep["l"] < 1e-6


def test_adam_zero_grad_no_decay_keeps_params():
    p = {"w": np.ones(4)}
    state = ad.AdamState({"w": (4,)}, weight_decay=0.0)
    ad.adam_step(p, {"w": np.zeros(4)}, state)
    np.testing.assert_array_equal(p["w"], np.ones(4))


def test_adam_first_step_closed_form():
    # g=1 at t=1: m_hat = 1, v_hat = 1 -> delta = -lr / (1 + eps)
    p = {"w": np.array([0.0])}
    state = ad.AdamState({"w": (1,)}, lr=1e-3, weight_decay=0.0)
    ad.adam_step(p, {"w": np.array([1.0])}, state)
    np.testing.assert_allclose(p["w"], [-1e-3 / (1 + 1e-8)], rtol=1e-12)


def test_adam_decoupled_weight_decay():
    p = {"w": np.array([2.0])}
    state = ad.AdamState({"w": (1,)}, lr=0.1, weight_decay=0.5)
    ad.adam_step(p, {"w": np.array([0.0])}, state)
    # pure decay: w <- w - lr*wd*w = 2 - 0.1*0.5*2
    np.testing.assert_allclose(p["w"], [1.9])


def test_adam_deterministic():
    def run():
        rng = np.random.default_rng(3)
        p = {"w": rng.normal(size=(4, 2))}
        state = ad.AdamState({"w": (4, 2)})
        for _ in range(25):
            ad.adam_step(p, {"w": rng.normal(size=(4, 2))}, state)
        return p["w"]

    np.testing.assert_array_equal(run(), run())


def test_debug_nan_check():
    ad.DEBUG_NAN = True
    try:
        with np.errstate(invalid="ignore"), pytest.raises(FloatingPointError):
            ad.log(ad.Tensor(np.array([-1.0])))
    finally:
        ad.DEBUG_NAN = False
