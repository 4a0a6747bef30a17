"""Engine contracts: initialization, forwards, losses, exact gradients, and
agreement between the compiled and pure-python cores."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradsign.engine import (
    Batch,
    LayerSpec,
    NetworkSpec,
    ProgramBuilder,
    available_cores,
    finite_diff_gradient,
    forward,
    hessian_vector_product,
    init_params,
    mean_loss_and_gradient,
    per_sample_gradients,
    per_sample_losses,
    use_core,
)

from conftest import random_mlp, scalar_linear_program

needs_compiled = pytest.mark.skipif(
    "compiled" not in available_cores(), reason="compiled core not built"
)


class TestInitParams:
    def test_same_seed_bit_identical(self, small_net):
        a = init_params(small_net, 123)
        b = init_params(small_net, 123)
        assert a.tobytes() == b.tobytes()

    def test_fan_in_bound(self):
        net = NetworkSpec(4, (LayerSpec(64, "relu"),))
        theta = init_params(net, 0)
        assert np.all(np.abs(theta) <= 0.5)  # fan_in 4 -> bound 1/2

    def test_different_seeds_differ(self, small_net):
        assert np.any(init_params(small_net, 1) != init_params(small_net, 2))


class TestForward:
    def test_identity_map(self):
        net = NetworkSpec(2, (LayerSpec(2, "identity"),))
        theta = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])  # W = I, b = 0
        out = forward(net, theta, np.array([[1.0, 2.0]]))
        assert np.allclose(out, [[1.0, 2.0]])

    def test_relu_kills_negative_preactivations(self):
        net = NetworkSpec(1, (LayerSpec(3, "relu", bias=False), LayerSpec(1, "identity")))
        theta = np.zeros(net.num_params)
        theta[:3] = -1.0  # hidden W; x > 0 makes every preactivation negative
        _, bufmat, _ = __import__("gradsign.engine", fromlist=["forward_with_cache"]).forward_with_cache(
            net, theta, np.array([[2.0]])
        )
        hidden = bufmat[:, 1:4]
        assert np.all(hidden == 0.0)

    def test_against_straight_line_reevaluation(self, rng):
        # independent re-derivation of the same arithmetic for a 2-layer net
        net = NetworkSpec(3, (LayerSpec(4, "tanh"), LayerSpec(2, "identity")))
        theta = init_params(net, 5)
        x = rng.normal(size=(7, 3))
        w1 = theta[0:12].reshape(4, 3)
        b1 = theta[12:16]
        w2 = theta[16:24].reshape(2, 4)
        b2 = theta[24:26]
        expected = np.tanh(x @ w1.T + b1) @ w2.T + b2
        assert np.max(np.abs(forward(net, theta, x) - expected)) < 1e-12

    def test_input_dim_mismatch_names_layer(self, small_net):
        theta = init_params(small_net, 0)
        with pytest.raises(ValueError, match="layer0"):
            forward(small_net, theta, np.zeros((2, 5)))

    def test_param_length_mismatch(self, small_net):
        with pytest.raises(ValueError, match="declares"):
            forward(small_net, np.zeros(3), np.zeros((2, 3)))

    def test_last_layer_must_have_bias(self):
        with pytest.raises(ValueError, match="bias"):
            NetworkSpec(2, (LayerSpec(2, "relu", bias=False),))


class TestLosses:
    def test_mse_exact_fit_is_zero(self):
        pred = np.array([[0.3, -0.2]])
        assert per_sample_losses(pred, pred.copy(), "mse")[0] == 0.0

    def test_cross_entropy_uniform_logits(self):
        loss = per_sample_losses(np.array([[0.0, 0.0]]), np.array([0]), "cross_entropy")
        assert abs(loss[0] - np.log(2.0)) < 1e-12

    def test_mse_direct_arithmetic(self):
        loss = per_sample_losses(np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]]), "mse")
        assert loss[0] == 0.5

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="class range"):
            per_sample_losses(np.zeros((1, 2)), np.array([2]), "cross_entropy")

    def test_losses_nonnegative(self, rng):
        pred = rng.normal(size=(20, 3))
        labels = rng.integers(0, 3, 20)
        assert np.all(per_sample_losses(pred, labels, "cross_entropy") >= 0.0)


class TestPerSampleGradients:
    def test_scalar_linear_analytic(self):
        # y_hat = w * x at w=3, sample (1, 1), mse: dl/dw = 2 * (3 - 1) = 4
        prog = scalar_linear_program()
        batch = Batch(np.array([[1.0]]), np.array([[1.0]]))
        grads = per_sample_gradients(prog, np.array([3.0]), batch, "mse")
        assert abs(grads[0, 0] - 4.0) < 1e-12

    def test_zero_row_at_per_sample_optimum(self, rng):
        net = NetworkSpec(2, (LayerSpec(2, "identity"),))
        theta = init_params(net, 3)
        x = rng.normal(size=(4, 2))
        labels = forward(net, theta, x)  # exact fit for every sample
        grads = per_sample_gradients(net, theta, Batch(x, labels), "mse")
        assert np.max(np.abs(grads)) == 0.0

    def test_matches_finite_differences(self, rng):
        for trial in range(10):
            net = random_mlp(rng)
            theta = init_params(net, trial)
            batch = Batch(
                rng.normal(size=(3, net.input_dim)), rng.integers(0, net.output_dim, 3)
            )
            grads = per_sample_gradients(net, theta, batch, "cross_entropy")
            for i in range(batch.n):
                fd = finite_diff_gradient(net, theta, batch.row(i), "cross_entropy", 1e-5)
                mask = np.abs(grads[i]) > 1e-8
                rel = np.abs(fd[mask] - grads[i][mask]) / np.abs(grads[i][mask])
                assert rel.max() < 1e-4

    def test_mean_gradient_is_row_mean(self, small_net, small_batch):
        theta = init_params(small_net, 1)
        grads = per_sample_gradients(small_net, theta, small_batch, "cross_entropy")
        _, mean_grad = mean_loss_and_gradient(small_net, theta, small_batch, "cross_entropy")
        assert np.max(np.abs(mean_grad - grads.mean(axis=0))) < 1e-12

    def test_repeat_calls_bit_identical(self, small_net, small_batch):
        theta = init_params(small_net, 1)
        a = per_sample_gradients(small_net, theta, small_batch, "cross_entropy")
        b = per_sample_gradients(small_net, theta, small_batch, "cross_entropy")
        assert a.tobytes() == b.tobytes()


class TestFiniteDiff:
    def test_quadratic_slope(self):
        # loss(w) = w^2 via y_hat = w * x at x=1, y=0; slope at 3 is 6
        prog = scalar_linear_program()
        sample = Batch(np.array([[1.0]]), np.array([[0.0]]))
        fd = finite_diff_gradient(prog, np.array([3.0]), sample, "mse", 1e-5)
        assert abs(fd[0] - 6.0) < 1e-6

    def test_unused_parameters_get_zero(self):
        # a dense edge feeding a dead-end buffer contributes nothing
        b = ProgramBuilder(2)
        dead = b.add_buffer(3)
        out = b.add_buffer(2)
        b.dense(0, dead, "tanh", True, "dead_end")
        b.dense(0, out, "identity", True, "head")
        prog = b.finish(out)
        theta = init_params(prog, 0)
        sample = Batch(np.array([[0.5, -0.3]]), np.array([1]))
        fd = finite_diff_gradient(prog, theta, sample, "cross_entropy", 1e-5)
        assert np.allclose(fd[:9], 0.0)  # dead-end W (6) + bias (3)

    def test_eps_must_be_positive(self, small_net, small_batch):
        theta = init_params(small_net, 0)
        with pytest.raises(ValueError, match="eps"):
            finite_diff_gradient(small_net, theta, small_batch.row(0), "mse", 0.0)


class TestHessianVectorProduct:
    def test_matches_gradient_differencing(self, rng):
        for trial in range(5):
            net = random_mlp(rng)
            theta = init_params(net, 100 + trial)
            batch = Batch(
                rng.normal(size=(4, net.input_dim)), rng.integers(0, net.output_dim, 4)
            )
            v = rng.normal(size=theta.size)
            hv = hessian_vector_product(net, theta, batch, "cross_entropy", v)
            eps = 1e-6
            _, up = mean_loss_and_gradient(net, theta + eps * v, batch, "cross_entropy")
            _, down = mean_loss_and_gradient(net, theta - eps * v, batch, "cross_entropy")
            fd = (up - down) / (2.0 * eps)
            scale = max(1.0, np.abs(fd).max())
            assert np.max(np.abs(hv - fd)) / scale < 1e-6

    def test_quadratic_hessian_exact(self):
        # l = (w - 0)^2 has Hessian 2; Hv = 2v
        prog = scalar_linear_program()
        batch = Batch(np.array([[1.0]]), np.array([[0.0]]))
        hv = hessian_vector_product(prog, np.array([3.0]), batch, "mse", np.array([1.5]))
        assert abs(hv[0] - 3.0) < 1e-12


@needs_compiled
class TestCoreAgreement:
    def test_forward_and_gradients_agree(self, rng):
        for trial in range(8):
            net = random_mlp(rng)
            theta = init_params(net, trial)
            batch = Batch(
                rng.normal(size=(5, net.input_dim)), rng.integers(0, net.output_dim, 5)
            )
            outs = {}
            for core in ("python", "compiled"):
                with use_core(core):
                    f = forward(net, theta, batch)
                    g = per_sample_gradients(net, theta, batch, "cross_entropy")
                    loss, mg = mean_loss_and_gradient(net, theta, batch, "cross_entropy")
                    outs[core] = (f, g, loss, mg)
            for a, b in zip(outs["python"], outs["compiled"]):
                assert np.allclose(a, b, rtol=1e-10, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    n=st.integers(1, 6),
    scale=st.floats(0.1, 3.0, allow_nan=False),
)
def test_forward_finite_and_deterministic(seed, n, scale):
    rng = np.random.default_rng(seed)
    net = random_mlp(rng)
    theta = init_params(net, seed)
    x = scale * rng.normal(size=(n, net.input_dim))
    out1 = forward(net, theta, x)
    out2 = forward(net, theta, x)
    assert np.all(np.isfinite(out1))
    assert out1.tobytes() == out2.tobytes()
