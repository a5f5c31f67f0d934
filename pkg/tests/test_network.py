import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from powerres.core import ContractError, ParameterSet, RngStream, flatten, unflatten
from powerres.network import (KINDS, ArchitectureSpec, backward, canonical_kind, forward, init_params,
                              load_checkpoint, parameter_count, predict, save_checkpoint, unroll3)


def random_params(spec, seed, scale=1.0):
    r = RngStream(seed)
    p = init_params(spec, r.child(0))
    return ParameterSet([scale * w for w in p.weights], [r.child(1 + i).normal(size=b.shape) * 0.3
                                                         for i, b in enumerate(p.biases)])


class TestSpec:
    def test_aliases(self):
        assert canonical_kind("SQR-SkipResNet") == "sqr_skip_resnet"
        assert canonical_kind("Plain NN") == "plain"
        with pytest.raises(ContractError):
            canonical_kind("highway")

    def test_skip_layers_by_kind(self):
        mk = lambda kind: ArchitectureSpec.uniform(kind, 5, 6, 5)
        assert mk("plain").skip_layers() == []
        assert mk("resnet").skip_layers() == [1, 2, 3, 4, 5, 6]
        assert mk("skip_resnet").skip_layers() == [1, 3, 5]
        assert mk("sqr_skip_resnet").skip_layers() == [1, 3, 5]
        assert mk("sqr_skip_resnet").skip_power(3) == 2
        assert mk("skip_resnet").skip_power(3) == 1

    def test_no_skip_on_width_change(self):
        # input width 2 differs from 50, so layer 1 is a plain layer
        spec = ArchitectureSpec.uniform("sqr_skip_resnet", 2, 10, 50)
        assert spec.skip_layers() == [3, 5, 7, 9]

    def test_parameter_count(self):
        spec = ArchitectureSpec.uniform("resnet", 2, 10, 50)
        assert parameter_count(spec) == (2 * 50 + 50) + 9 * (50 * 50 + 50) + (50 + 1)

    def test_invalid(self):
        with pytest.raises(ContractError):
            ArchitectureSpec("plain", 2, ())
        with pytest.raises(ContractError):
            ArchitectureSpec("sqr", 2, (3,), power=0)
        with pytest.raises(ContractError):
            ArchitectureSpec("plain", 2, (3,), activation="relu")

    def test_dict_round_trip(self):
        spec = ArchitectureSpec.uniform("skip_resnet", 3, 4, 7, power=3)
        assert ArchitectureSpec.from_dict(spec.to_dict()) == spec


class TestForward:
    def test_plain_one_layer_by_hand(self):
        spec = ArchitectureSpec("plain", 2, (2,), 1)
        p = ParameterSet([np.array([[1.0, 0.0], [0.0, 2.0]]), np.array([[1.0, -1.0]])],
                         [np.array([0.0, 0.5]), np.array([0.25])])
        x = np.array([0.3, -0.2])
        expect = np.tanh(0.3) - np.tanh(-0.4 + 0.5) + 0.25
        assert predict(spec, p, x)[0] == pytest.approx(expect, abs=1e-15)

    def test_zero_params_give_zero(self):
        for kind in KINDS:
            spec = ArchitectureSpec.uniform(kind, 3, 4, 3)
            p = unflatten(np.zeros(parameter_count(spec)), spec)
            x = np.random.default_rng(0).normal(size=(6, 3))
            np.testing.assert_array_equal(predict(spec, p, x), 0.0)

    def test_single_and_batch_agree(self):
        spec = ArchitectureSpec.uniform("sqr", 2, 3, 4)
        p = random_params(spec, 1)
        X = np.random.default_rng(1).uniform(size=(5, 2))
        batch = predict(spec, p, X)
        for i in range(5):
            np.testing.assert_allclose(predict(spec, p, X[i]), batch[i], rtol=0, atol=1e-14)

    def test_bad_input_width(self):
        spec = ArchitectureSpec.uniform("plain", 2, 1, 3)
        with pytest.raises(ContractError):
            forward(spec, init_params(spec, RngStream(0)), np.ones((4, 3)))

    def test_mismatched_params(self):
        spec = ArchitectureSpec.uniform("plain", 2, 2, 3)
        other = init_params(ArchitectureSpec.uniform("plain", 2, 2, 4), RngStream(0))
        with pytest.raises(ContractError):
            forward(spec, other, np.ones(2))

    def test_residual_flag_off_equals_plain(self):
        X = np.random.default_rng(2).normal(size=(7, 4))
        for kind in ("resnet", "skip_resnet", "sqr_skip_resnet"):
            spec = ArchitectureSpec.uniform(kind, 4, 5, 4)
            p = random_params(spec, 3)
            off = ArchitectureSpec.uniform(kind, 4, 5, 4, residual=False)
            plain = ArchitectureSpec.uniform("plain", 4, 5, 4)
            np.testing.assert_array_equal(predict(off, p, X), predict(plain, p, X))

    def test_sqr_layer_adds_square(self):
        # one hidden layer, width = input width: x1 = tanh(W x + b) + x**2
        spec = ArchitectureSpec("sqr", 2, (2,), 1)
        p = random_params(spec, 4)
        x = np.array([0.7, -1.3])
        _, cache = forward(spec, p, x)
        np.testing.assert_allclose(cache.outs[1][0], np.tanh(p.weights[0] @ x + p.biases[0]) + x ** 2,
                                   rtol=0, atol=1e-15)

    def test_power_three(self):
        spec = ArchitectureSpec("sqr", 2, (2,), 1, power=3)
        p = random_params(spec, 4)
        x = np.array([0.7, -1.3])
        _, cache = forward(spec, p, x)
        np.testing.assert_allclose(cache.outs[1][0], np.tanh(p.weights[0] @ x + p.biases[0]) + x ** 3,
                                   atol=1e-15)


class TestUnroll3:
    @pytest.mark.parametrize("kind", ["plain", "resnet", "skip_resnet", "sqr_skip_resnet"])
    def test_matches_forward(self, kind):
        for seed in range(20):
            d = 1 + seed % 4
            spec = ArchitectureSpec.uniform(kind, d, 3, d)
            p = random_params(spec, seed)
            X = RngStream(seed).child(9).normal(size=(6, d))
            _, cache = forward(spec, p, X)
            np.testing.assert_allclose(cache.outs[3], unroll3(kind, p, X), rtol=0, atol=1e-12)

    def test_shape_checks(self):
        spec = ArchitectureSpec.uniform("plain", 2, 2, 2)
        with pytest.raises(ContractError):
            unroll3("plain", init_params(spec, RngStream(0)), np.ones(2))
        spec = ArchitectureSpec.uniform("plain", 2, 3, 3)
        with pytest.raises(ContractError):
            unroll3("plain", init_params(spec, RngStream(0)), np.ones(2))


def numeric_grad(spec, params, X, U, h=1e-6):
    theta = flatten(params)
    g = np.zeros_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        fp = np.sum(predict(spec, unflatten(tp, spec), X) * U)
        fm = np.sum(predict(spec, unflatten(tm, spec), X) * U)
        g[i] = (fp - fm) / (2 * h)
    return g


class TestBackward:
    @pytest.mark.parametrize("kind", KINDS)
    def test_against_finite_differences(self, kind):
        spec = ArchitectureSpec.uniform(kind, 3, 3, 3)
        p = random_params(spec, 11, scale=0.8)
        X = np.random.default_rng(3).uniform(-1, 1, size=(4, 3))
        U = np.random.default_rng(4).normal(size=(4, 1))
        _, cache = forward(spec, p, X)
        grads, _ = backward(spec, p, cache, U)
        fd = numeric_grad(spec, p, X, U)
        g = flatten(grads)
        assert np.max(np.abs(g - fd) / np.maximum(1, np.abs(g))) < 1e-7

    @pytest.mark.parametrize("kind", KINDS)
    def test_input_gradient(self, kind):
        spec = ArchitectureSpec.uniform(kind, 2, 4, 2)
        p = random_params(spec, 5)
        x = np.array([0.3, -0.4])
        _, cache = forward(spec, p, x)
        _, gx = backward(spec, p, cache, np.ones(1))
        h = 1e-6
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            fd = (predict(spec, p, x + e)[0] - predict(spec, p, x - e)[0]) / (2 * h)
            assert gx[i] == pytest.approx(fd, abs=1e-8)

    def test_stale_cache_rejected(self):
        spec = ArchitectureSpec.uniform("plain", 2, 2, 3)
        p = random_params(spec, 0)
        _, cache = forward(spec, p, np.ones((2, 2)))
        q = p.scaled(2.0)
        with pytest.raises(ContractError):
            backward(spec, q, cache, np.ones((2, 1)))

    def test_upstream_shape_checked(self):
        spec = ArchitectureSpec.uniform("plain", 2, 2, 3)
        p = random_params(spec, 0)
        _, cache = forward(spec, p, np.ones((2, 2)))
        with pytest.raises(ContractError):
            backward(spec, p, cache, np.ones((3, 1)))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from(KINDS), st.integers(1, 4))
    def test_gradient_linear_in_upstream(self, seed, kind, depth):
        spec = ArchitectureSpec.uniform(kind, 2, depth, 2)
        p = random_params(spec, seed)
        X = RngStream(seed).uniform(-1, 1, size=(3, 2))
        _, cache = forward(spec, p, X)
        a = flatten(backward(spec, p, cache, np.ones((3, 1)))[0])
        b = flatten(backward(spec, p, cache, 2.5 * np.ones((3, 1)))[0])
        np.testing.assert_allclose(b, 2.5 * a, rtol=1e-12, atol=1e-14)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        spec = ArchitectureSpec.uniform("sqr", 3, 2, 5, power=3)
        p = random_params(spec, 8)
        save_checkpoint(tmp_path / "c.json", spec, p, {"note": 1})
        spec2, p2, extra = load_checkpoint(tmp_path / "c.json")
        assert spec2 == spec and p2 == p and extra == {"note": 1}

    def test_wrong_format(self, tmp_path):
        (tmp_path / "c.json").write_text('{"format": "other"}')
        with pytest.raises(ContractError):
            load_checkpoint(tmp_path / "c.json")
