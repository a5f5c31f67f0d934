import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from powerres.autodiff import (Jet2, Tape, affine, finite_difference_check, grad_wrt_params, jet_forward,
                               tape_forward, var_params, vsum)
from powerres.core import ContractError, ParameterSet, RngStream, flatten, unflatten
from powerres.network import KINDS, ArchitectureSpec, backward, forward, init_params, parameter_count, predict


def net(kind, d=2, layers=3, width=4, seed=0):
    spec = ArchitectureSpec.uniform(kind, d, layers, width)
    r = RngStream(seed)
    p = init_params(spec, r.child(0))
    p.biases = [0.2 * r.child(i + 1).normal(size=b.shape) for i, b in enumerate(p.biases)]
    return spec, p


def mse_loss(spec, X, y):
    def loss(v):
        out = tape_forward(spec, var_params(v, spec), X)
        r = out - y[:, None]
        return vsum(r * r) * (1.0 / len(y))
    return loss


class TestTape:
    def test_quadratic(self):
        f, g = grad_wrt_params(lambda v: vsum(v * v), np.array([1.0, 2.0]))
        assert f == 5.0
        np.testing.assert_array_equal(g, [2.0, 4.0])

    def test_unregistered_primitive(self):
        t = Tape()
        with pytest.raises(ContractError):
            t.apply("relu", t.var(1.0))

    def test_non_var_loss_rejected(self):
        with pytest.raises(ContractError):
            grad_wrt_params(lambda v: 1.0, np.ones(2))

    def test_shared_subexpression_counted_once_per_use(self):
        # L = sum((2v) * (2v)); each use of u contributes
        f, g = grad_wrt_params(lambda v: (lambda u: vsum(u * u))(v * 2.0), np.array([1.5, -1.0]))
        np.testing.assert_allclose(g, 8.0 * np.array([1.5, -1.0]))

    def test_mixing_tapes_rejected(self):
        a, b = Tape(), Tape()
        with pytest.raises(ContractError):
            a.var(1.0) + b.var(2.0)

    def test_plain_single_sample_matches_outer_product_formula(self):
        # one hidden layer: y = W2 tanh(W1 x + b1) + b2, L = (y - t)^2
        spec, p = net("plain", d=3, layers=1, width=5, seed=3)
        x, t = np.array([0.2, -0.5, 0.9]), 0.4
        W1, b1, W2, b2 = p.weights[0], p.biases[0], p.weights[1], p.biases[1]
        a = np.tanh(W1 @ x + b1)
        y = W2 @ a + b2
        delta2 = 2.0 * (y - t)                       # dL/dz2
        delta1 = (W2.T @ delta2) * (1.0 - a * a)     # dL/dz1
        expect = flatten(ParameterSet([np.outer(delta1, x), np.outer(delta2, a)], [delta1, delta2]))
        _, g = grad_wrt_params(mse_loss(spec, x[None, :], np.array([t])), flatten(p))
        np.testing.assert_allclose(g, expect, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("kind", KINDS)
    def test_tape_equals_hand_backward(self, kind):
        spec, p = net(kind, d=4, layers=4, width=4, seed=5)
        X = RngStream(6).uniform(-2, 2, size=(7, 4))
        y = np.sin(X.sum(axis=1))
        _, g_tape = grad_wrt_params(mse_loss(spec, X, y), flatten(p))
        out, cache = forward(spec, p, X)
        grads, _ = backward(spec, p, cache, (2.0 / len(y)) * (out - y[:, None]))
        np.testing.assert_allclose(g_tape, flatten(grads), rtol=0, atol=1e-12)

    @pytest.mark.parametrize("kind", KINDS)
    def test_tape_vs_finite_differences(self, kind):
        spec, p = net(kind, d=2, layers=3, width=3, seed=7)
        X = RngStream(8).uniform(-2, 2, size=(5, 2))
        y = np.cos(X[:, 0])
        loss = mse_loss(spec, X, y)
        assert finite_difference_check(lambda th: grad_wrt_params(loss, th), flatten(p)) < 1e-6

    def test_linearity(self):
        spec, p = net("sqr", seed=9)
        X = RngStream(10).uniform(-1, 1, size=(6, 2))
        y1, y2 = np.sin(X[:, 0]), X[:, 1] ** 2
        l1, l2 = mse_loss(spec, X, y1), mse_loss(spec, X, y2)
        th = flatten(p)
        _, g1 = grad_wrt_params(l1, th)
        _, g2 = grad_wrt_params(l2, th)
        _, g = grad_wrt_params(lambda v: l1(v) * 0.3 + l2(v) * (-1.7), th)
        np.testing.assert_allclose(g, 0.3 * g1 - 1.7 * g2, rtol=0, atol=1e-12)

    def test_affine_on_arrays(self):
        np.testing.assert_array_equal(affine(np.ones(2), np.eye(2), np.ones(2)), [2.0, 2.0])


class TestJet2:
    def test_product_rule(self):
        a = Jet2(2.0, (1.0, 0.0), 0.5)
        b = Jet2(3.0, (4.0, 1.0), -1.0)
        c = a * b
        assert c.value == 6.0
        assert c.d1 == (2.0 * 4.0 + 1.0 * 3.0, 2.0 * 1.0)
        assert c.d2 == 2.0 * -1.0 + 2 * 1.0 * 4.0 + 0.5 * 3.0

    def test_tanh_rule(self):
        x = Jet2.variable(0.5, n_dirs=1)
        y = x.tanh()
        s = np.tanh(0.5)
        assert y.d1[0] == pytest.approx(1 - s * s, abs=1e-15)
        assert y.d2 == pytest.approx(-2 * s * (1 - s * s), abs=1e-15)

    def test_power_matches_repeated_product(self):
        x = Jet2(0.7, (1.3, -0.2), 0.4)
        a, b = x ** 3, x * x * x
        assert a.value == pytest.approx(b.value, abs=1e-15)
        assert a.d1[0] == pytest.approx(b.d1[0], abs=1e-14)
        assert a.d1[1] == pytest.approx(b.d1[1], abs=1e-14)
        assert a.d2 == pytest.approx(b.d2, abs=1e-14)

    def test_too_many_directions(self):
        with pytest.raises(ContractError):
            Jet2(0.0, (0.0, 0.0, 0.0), 0.0)

    def test_subtraction_and_constants(self):
        x = Jet2.variable(2.0)
        y = 5.0 - x * x
        assert (y.value, y.d1, y.d2) == (1.0, (-4.0, 0.0), -2.0)


def fd_derivs(spec, p, x, h=1e-5):
    f = lambda z: predict(spec, p, z)[0]
    e0, e1 = np.array([h, 0.0]), np.array([0.0, h])
    return ((f(x + e0) - f(x - e0)) / (2 * h), (f(x + e1) - f(x - e1)) / (2 * h),
            (f(x + e0) - 2 * f(x) + f(x - e0)) / h ** 2)


class TestJetForward:
    def test_zero_network(self):
        spec = ArchitectureSpec.uniform("sqr", 2, 3, 4)
        p = unflatten(np.zeros(parameter_count(spec)), spec)
        v, (dx, dt), dxx = jet_forward(spec, p, np.array([0.3, 0.8]))
        assert (v, dx, dt, dxx) == (0.0, 0.0, 0.0, 0.0)

    def test_linear_network(self):
        spec = ArchitectureSpec("plain", 2, (1,), 1, activation="identity")
        p = ParameterSet([np.array([[3.0, 2.0]]), np.array([[1.0]])], [np.zeros(1), np.zeros(1)])
        v, (dx, dt), dxx = jet_forward(spec, p, np.array([0.5, -1.0]))
        assert (v, dx, dt, dxx) == (-0.5, 3.0, 2.0, 0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_sqr_vs_finite_differences(self, seed):
        spec, p = net("sqr", d=2, layers=3, width=2, seed=seed)
        x = RngStream(seed).child(5).uniform(-1, 1, size=2)
        _, (dx, dt), dxx = jet_forward(spec, p, x)
        fx, ft, _ = fd_derivs(spec, p, x, 1e-5)
        _, _, fxx = fd_derivs(spec, p, x, 1e-4)
        assert abs(dx - fx) / max(1, abs(dx)) < 1e-5
        assert abs(dt - ft) / max(1, abs(dt)) < 1e-5
        assert abs(dxx - fxx) / max(1, abs(dxx)) < 1e-5

    def test_first_derivatives_match_reverse_mode(self):
        for kind in KINDS:
            spec, p = net(kind, d=2, layers=4, width=2, seed=3)
            X = RngStream(4).uniform(-1, 1, size=(6, 2))
            _, (dx, dt), _ = jet_forward(spec, p, X)
            _, cache = forward(spec, p, X)
            _, gx = backward(spec, p, cache, np.ones((6, 1)))
            np.testing.assert_allclose(dx, gx[:, 0], rtol=1e-10, atol=1e-14)
            np.testing.assert_allclose(dt, gx[:, 1], rtol=1e-10, atol=1e-14)

    def test_explicit_direction_vectors(self):
        spec, p = net("resnet", d=2, layers=2, width=2, seed=1)
        x = np.array([0.1, 0.2])
        _, (d_axis, _), dd_axis = jet_forward(spec, p, x, (0, 1))
        _, (d_vec, _), dd_vec = jet_forward(spec, p, x, (np.array([2.0, 0.0]), np.array([0.0, 1.0])))
        assert d_vec == pytest.approx(2 * d_axis, abs=1e-14)
        assert dd_vec == pytest.approx(4 * dd_axis, abs=1e-13)

    def test_vector_output_rejected(self):
        spec = ArchitectureSpec.uniform("plain", 2, 1, 3, output_dim=2)
        with pytest.raises(ContractError):
            jet_forward(spec, init_params(spec, RngStream(0)), np.zeros(2))

    def test_reverse_over_forward_gradient(self):
        spec, p = net("sqr", d=2, layers=3, width=3, seed=2)
        X = RngStream(3).uniform(-1, 1, size=(4, 2))

        def loss(v):
            n, (nx, nt), nxx = jet_forward(spec, var_params(v, spec), X)
            g = nt + n * nx - nxx * 0.1
            return vsum(g * g)

        assert finite_difference_check(lambda th: grad_wrt_params(loss, th), flatten(p)) < 1e-6


class TestFiniteDifferenceCheck:
    def test_polynomial(self):
        assert finite_difference_check(lambda x: (x * x, 2 * x), 3.0) < 1e-9

    def test_tanh(self):
        assert finite_difference_check(lambda x: (np.tanh(x), 1 - np.tanh(x) ** 2), 0.5) < 1e-9

    def test_detects_wrong_gradient(self):
        d = finite_difference_check(lambda x: (x * x, 2 * x + 0.1), 0.2)
        assert d == pytest.approx(0.1, abs=1e-6)

    def test_separate_gradient_and_coords(self):
        f = lambda v: float(np.sum(v ** 3))
        d = finite_difference_check(f, np.array([1.0, 2.0, 3.0]), grad=lambda v: 3 * v ** 2, coords=[0, 2])
        assert d < 1e-8

    def test_bad_step(self):
        with pytest.raises(ContractError):
            finite_difference_check(lambda x: (x, 1.0), 0.0, step=0.0)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-2, 2))
    def test_composed_program_on_tape(self, x0):
        # tanh(x)^2 * x through the tape, compared with central differences
        prog = lambda v: vsum(v.tape.apply("tanh", v) ** 2 * v)
        assert finite_difference_check(lambda th: grad_wrt_params(prog, th), np.array([x0])) < 1e-6
