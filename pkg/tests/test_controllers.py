import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reachloop.controllers import (
    LinearController,
    NeuralController,
    controller_from_text,
    controller_to_text,
    evaluate,
    nn_lipschitz_bound,
    perturb,
)
from reachloop.geometry import IntervalBox
from reachloop.interval import Interval

finite = st.floats(-5, 5, allow_nan=False)


def _zero_net(out_bias=0.7):
    W = (np.zeros((2, 2)), np.zeros((1, 2)))
    b = (np.zeros(2), np.array([out_bias]))
    return NeuralController(W, b)


def test_linear_eval():
    assert evaluate(LinearController([1.0, 0.0]), [3.0, 5.0])[0] == 3.0
    assert evaluate(LinearController([0.659, -2.377]), [123.0, 50.0])[0] == pytest.approx(0.659 * 123 - 2.377 * 50)
    assert evaluate(LinearController([0.659, -2.377]), [123.0, 50.0])[0] == pytest.approx(-37.793, abs=1e-12)


def test_linear_with_bias():
    k = LinearController([0.3162, -0.6789], -12.3)
    assert k([123.0, 50.0])[0] == pytest.approx(0.3162 * 123 - 0.6789 * 50 - 12.3)


def test_zero_net_returns_output_bias():
    net = _zero_net()
    x = np.random.default_rng(0).normal(size=(10, 2)) * 100
    assert np.all(net(x) == 0.7)


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        LinearController([1.0, 2.0])([1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        NeuralController.random([2, 2, 1], 0)([1.0])


def test_bad_architecture_rejected():
    with pytest.raises(ValueError):
        NeuralController((np.zeros((2, 2)), np.zeros((2, 2))), (np.zeros(2), np.zeros(2)))
    with pytest.raises(ValueError):
        NeuralController((np.zeros((2, 2)), np.zeros((1, 3))), (np.zeros(2), np.zeros(1)))
    with pytest.raises(ValueError):
        NeuralController((np.zeros((2, 2)), np.zeros((1, 2))), (np.zeros(2), np.zeros(1)), ("relu",))


def test_random_init_in_unit_interval():
    net = NeuralController.random([2, 2, 1], 0)
    p = net.params()
    assert p.size == 9
    assert np.all((p >= 0) & (p <= 1))
    assert np.array_equal(NeuralController.random([2, 2, 1], 0).params(), p)


@settings(max_examples=100)
@given(st.lists(finite, min_size=9, max_size=9))
def test_param_round_trip_is_exact(theta):
    net = NeuralController.random([2, 2, 1], 1).with_params(theta)
    assert np.array_equal(net.params(), np.array(theta))
    lin = LinearController([0.0, 0.0], 0.0, True).with_params(theta[:3])
    assert np.array_equal(lin.params(), np.array(theta[:3]))


def test_with_params_wrong_length():
    with pytest.raises(ValueError):
        LinearController([1.0, 2.0]).with_params([1.0])


@settings(max_examples=100)
@given(st.lists(finite, min_size=2, max_size=2), st.lists(finite, min_size=2, max_size=2))
def test_linear_is_homogeneous(theta, x):
    k = LinearController(theta)
    k2 = k.with_params(2 * np.array(theta))
    assert k2(x)[0] == pytest.approx(2 * k(x)[0], abs=1e-12)


@settings(max_examples=100)
@given(st.lists(finite, min_size=9, max_size=9), st.lists(st.floats(-100, 100), min_size=2, max_size=2))
def test_tanh_net_output_bound(theta, x):
    net = NeuralController.random([2, 2, 1], 0).with_params(theta)
    bound = abs(net.biases[-1][0]) + np.abs(net.weights[-1]).sum()
    assert abs(net(x)[0]) <= bound + 1e-12


def test_text_round_trip_is_exact():
    net = NeuralController.random([2, 3, 1], 5)
    back = controller_from_text(controller_to_text(net))
    assert np.array_equal(back.params(), net.params())
    assert back.layer_sizes == [2, 3, 1]
    lin = LinearController([0.1 + 0.2, -1 / 3], -12.3, True)
    back = controller_from_text(controller_to_text(lin))
    assert np.array_equal(back.params(), lin.params()) and back.bias == lin.bias


def test_unknown_controller_type():
    with pytest.raises(ValueError):
        controller_from_text('{"type": "polynomial"}')


# ---------------------------------------------------------------- perturbation


def test_perturb_midpoint_and_determinism():
    theta = np.array([0.3, -1.2, 5.0])
    tp, tm, p = perturb(theta, 1.0, 42)
    # each of theta +- p rounds once, so the midpoint agrees to a few ulps
    assert np.allclose((tp + tm) / 2, theta, rtol=4e-16, atol=4e-16)
    tp2, tm2, p2 = perturb(theta, 1.0, 42)
    assert np.array_equal(p, p2) and np.array_equal(tp, tp2) and np.array_equal(tm, tm2)


def test_perturb_magnitudes_respect_floor():
    rng = np.random.default_rng(0)
    for _ in range(200):
        _, _, p = perturb(np.zeros(2), [1.0, 1.0], rng)
        assert np.all((np.abs(p) >= 0.01) & (np.abs(p) <= 1.0))
    _, _, p = perturb(np.zeros(3), [0.2, 0.1, 3.0], 7)
    assert np.all(np.abs(p) <= [0.2, 0.1, 3.0])


def test_perturb_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        perturb(np.zeros(2), [1.0, 0.0], 0)


# ---------------------------------------------------------------- Lipschitz


def test_lipschitz_zero_and_single_layer():
    assert nn_lipschitz_bound(_zero_net()) == 0.0
    one = NeuralController((np.array([[2.0, 0.0]]),), (np.zeros(1),), ())
    assert nn_lipschitz_bound(one) == pytest.approx(2.0)


def test_lipschitz_bound_dominates_sampled_slopes():
    rng = np.random.default_rng(11)
    for _ in range(5):
        net = NeuralController.random([2, 2, 1], rng, -2.0, 2.0)
        L = nn_lipschitz_bound(net)
        a = rng.uniform(-3, 3, (10_000, 2))
        b = a + rng.normal(scale=1e-2, size=a.shape)
        slopes = np.abs(net(a) - net(b))[:, 0] / np.linalg.norm(a - b, axis=1)
        assert slopes.max() <= L * (1 + 1e-9)
        box = IntervalBox([-3, -3], [3, 3])
        assert nn_lipschitz_bound(net, box) <= L + 1e-12


# ---------------------------------------------------------------- interval forms


def test_interval_forward_and_jacobian_enclose_samples():
    rng = np.random.default_rng(3)
    net = NeuralController.random([2, 2, 1], rng, -1.5, 1.5)
    lo = np.array([[-0.6, 0.4], [0.0, -0.2]])
    hi = lo + 0.3
    X = Interval(lo, hi)
    Y = net.interval_forward(X)
    J = net.interval_jacobian(X)
    for i in range(2):
        pts = rng.uniform(lo[i], hi[i], (2000, 2))
        y = net(pts)[:, 0]
        assert Y.lo[i, 0] <= y.min() and y.max() <= Y.hi[i, 0]
        jac = net.jacobian(pts)[:, 0, :]
        assert np.all(J.lo[i, 0] <= jac) and np.all(jac <= J.hi[i, 0])


def test_point_jacobian_matches_finite_differences():
    net = NeuralController.random([2, 3, 1], 9, -1, 1)
    x = np.array([0.2, -0.4])
    eps = 1e-6
    fd = [(net(x + e)[0] - net(x - e)[0]) / (2 * eps) for e in np.eye(2) * eps]
    assert np.allclose(net.jacobian(x)[0], fd, atol=1e-8)
