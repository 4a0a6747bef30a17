"""Metric contracts: the sign-agreement score and its invariants, plus each
baseline against hand-derived values or independent oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradsign import archspace as A
from gradsign import metrics as M
from gradsign.engine import (
    Batch,
    LayerSpec,
    NetworkSpec,
    forward,
    hessian_vector_product,
    init_params,
    mean_loss_and_gradient,
    per_sample_gradients,
)

from conftest import scalar_linear_program


class TestSignMatrix:
    def test_basic_signs(self):
        assert (M.sign_matrix(np.array([[0.5, -0.2]])) == [[1, -1]]).all()

    def test_zero_maps_to_zero(self):
        assert M.sign_matrix(np.array([[0.0]]))[0, 0] == 0

    def test_tolerance_band(self):
        assert M.sign_matrix(np.array([[1e-13]]), zero_tol=1e-12)[0, 0] == 0

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            M.sign_matrix(np.array([[np.nan]]))


class TestGradsignStatistic:
    def test_hand_computed_example(self):
        # signs row1 = (+,+,-), row2 = (+,-,-): column sums (2, 0, -2) -> 4
        g = np.array([[0.5, 1.0, -2.0], [1.0, -0.5, -0.3]])
        assert M.gradsign_statistic(g) == 4.0

    def test_maximum_when_all_rows_agree(self):
        g = np.tile([[1.0, -2.0, 3.0]], (5, 1))
        assert M.gradsign_statistic(g) == 5 * 3

    def test_minimum_when_rows_opposite(self):
        g = np.array([[1.0, -1.0], [-1.0, 1.0]])
        assert M.gradsign_statistic(g) == 0.0

    def test_independent_sign_counting(self, rng):
        # tau == sum_k |n - 2 p_k| with p_k the positive count (no zeros)
        for _ in range(200):
            g = rng.standard_normal((int(rng.integers(2, 9)), int(rng.integers(1, 12))))
            p = (g > 0).sum(axis=0)
            expected = np.abs(g.shape[0] - 2 * p).sum()
            assert M.gradsign_statistic(g) == expected

    def test_permutation_invariance(self, rng):
        g = rng.standard_normal((8, 20))
        perm = rng.permutation(8)
        assert M.gradsign_statistic(g) == M.gradsign_statistic(g[perm])

    def test_positive_scaling_invariance(self, rng):
        g = rng.standard_normal((6, 15))
        assert M.gradsign_statistic(g) == M.gradsign_statistic(37.5 * g)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31), st.integers(2, 10), st.integers(1, 16))
    def test_range_and_parity(self, seed, n, m):
        g = np.random.default_rng(seed).standard_normal((n, m))
        tau = M.gradsign_statistic(g)
        assert 0 <= tau <= n * m
        assert int(tau) % 2 == (n * m) % 2  # no zero signs -> fixed parity


class TestGradsignScore:
    def test_requires_two_samples(self, small_net):
        theta = init_params(small_net, 0)
        batch = Batch(np.zeros((1, 3)), np.array([0]))
        with pytest.raises(ValueError, match="at least 2"):
            M.gradsign_score(small_net, theta, batch)

    def test_matches_statistic_of_gradients(self, small_net, small_batch):
        theta = init_params(small_net, 4)
        score = M.gradsign_score(small_net, theta, small_batch)
        g = per_sample_gradients(small_net, theta, small_batch, "cross_entropy")
        assert score.value == M.gradsign_statistic(g)

    def test_batch_permutation_leaves_score(self, small_net, small_batch, rng):
        theta = init_params(small_net, 4)
        perm = rng.permutation(small_batch.n)
        shuffled = small_batch.take(perm)
        assert (
            M.gradsign_score(small_net, theta, small_batch).value
            == M.gradsign_score(small_net, theta, shuffled).value
        )


class TestBaselines:
    def test_scalar_linear_grad_norm_and_snip(self):
        # y_hat = w*x, w=2, x=1, y=0, mse: g = 4 -> grad_norm 4, snip |2*4| = 8
        prog = scalar_linear_program()
        batch = Batch(np.array([[1.0]]), np.array([[0.0]]))
        theta = np.array([2.0])
        assert M.baseline_score("grad_norm", prog, theta, batch, "mse").value == 4.0
        assert M.baseline_score("snip", prog, theta, batch, "mse").value == 8.0

    def test_zero_gradient_batch(self):
        net = NetworkSpec(2, (LayerSpec(2, "identity"),))
        theta = init_params(net, 1)
        x = np.random.default_rng(0).normal(size=(4, 2))
        batch = Batch(x, forward(net, theta, x))  # exact fit, gradient 0
        assert M.baseline_score("grad_norm", net, theta, batch, "mse").value == 0.0
        assert M.baseline_score("snip", net, theta, batch, "mse").value == 0.0

    def test_grasp_matches_hvp_identity(self, small_net, small_batch):
        theta = init_params(small_net, 2)
        _, g = mean_loss_and_gradient(small_net, theta, small_batch, "cross_entropy")
        hg = hessian_vector_product(small_net, theta, small_batch, "cross_entropy", g)
        expected = float(-(hg * theta).sum())
        got = M.baseline_score("grasp", small_net, theta, small_batch).value
        assert abs(got - expected) < 1e-12

    def test_synflow_closed_form_linear_chain(self):
        # two scalar identity layers: R = |w1|*|w2| + ..., score = 2*|w1 w2| + extras
        net = NetworkSpec(1, (LayerSpec(1, "identity", bias=False), LayerSpec(1, "identity")))
        theta = np.array([-2.0, 3.0, 0.5])  # w1, w2, b2
        # R(|theta|) on x=1: |w2| * |w1| + |b2|; dR/d|w1| = |w2|, dR/d|w2| = |w1|, dR/d|b2| = 1
        expected = 2.0 * 6.0 + 0.5
        got = M.baseline_score("synflow", net, theta, Batch(np.ones((1, 1)), np.array([0])))
        assert abs(got.value - expected) < 1e-12

    def test_fisher_positive_on_random_net(self, small_net, small_batch):
        theta = init_params(small_net, 3)
        assert M.baseline_score("fisher", small_net, theta, small_batch).value > 0.0

    def test_baselines_permutation_invariant(self, small_net, small_batch, rng):
        theta = init_params(small_net, 5)
        shuffled = small_batch.take(rng.permutation(small_batch.n))
        for kind in ("grad_norm", "snip", "grasp", "synflow", "fisher", "naswot"):
            a = M.baseline_score(kind, small_net, theta, small_batch).value
            b = M.baseline_score(kind, small_net, theta, shuffled).value
            assert abs(a - b) < 1e-9, kind


class TestNaswot:
    def test_identical_patterns_flagged(self):
        net = NetworkSpec(2, (LayerSpec(4, "relu"), LayerSpec(2, "identity")))
        theta = init_params(net, 0)
        x = np.tile([[0.3, -0.1]], (3, 1))  # duplicate rows -> singular kernel
        score = M.baseline_score("naswot", net, theta, Batch(x, np.array([0, 1, 0])))
        assert score.flagged

    def test_relu_free_network_rejected(self):
        net = NetworkSpec(2, (LayerSpec(3, "tanh"), LayerSpec(2, "identity")))
        theta = init_params(net, 0)
        batch = Batch(np.random.default_rng(1).normal(size=(4, 2)), np.array([0, 1, 0, 1]))
        with pytest.raises(M.UnsupportedMetricError):
            M.baseline_score("naswot", net, theta, batch)

    def test_distinct_patterns_not_flagged(self):
        from gradsign.engine import relu_activation_patterns

        rng = np.random.default_rng(7)
        net = NetworkSpec(4, (LayerSpec(12, "relu"), LayerSpec(2, "identity")))
        theta = init_params(net, 2)
        batch = Batch(3.0 * rng.normal(size=(5, 4)), rng.integers(0, 2, 5))
        patterns = relu_activation_patterns(net, theta, batch)
        assert len({row.tobytes() for row in patterns}) == batch.n  # distinct by construction
        score = M.baseline_score("naswot", net, theta, batch)
        assert not score.flagged and np.isfinite(score.value)


class TestScorePool:
    def setup_method(self):
        self.space = A.SearchSpaceSpec(cell_width=8, num_cells=1)
        self.spec = M.MetricSpec("gradsign", self.space, 2)
        rng = np.random.default_rng(0)
        self.batch = Batch(rng.normal(size=(16, 2)), rng.integers(0, 2, 16))
        self.archs = [A.random_arch(rng) for _ in range(10)]

    def test_same_seed_identical(self):
        a = M.score_pool(self.spec, self.archs, self.batch, 3)
        b = M.score_pool(self.spec, self.archs, self.batch, 3)
        assert [s.value for s in a] == [s.value for s in b]

    def test_singleton_equals_direct_call(self):
        pool = M.score_pool(self.spec, self.archs[:1], self.batch, 3)
        direct = M.score_arch(self.spec, self.archs[0], self.batch, 3)
        assert pool[0].value == direct.value

    def test_serial_matches_parallel(self):
        serial = M.score_pool(self.spec, self.archs, self.batch, 3, workers=1)
        parallel = M.score_pool(self.spec, self.archs, self.batch, 3, workers=2)
        assert [s.value for s in serial] == [s.value for s in parallel]
        assert [s.arch_id for s in serial] == [s.arch_id for s in parallel]

    def test_empty_pool_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            M.score_pool(self.spec, [], self.batch, 0)

    def test_requires_known_metric(self):
        with pytest.raises(ValueError, match="unknown metric"):
            M.MetricSpec("zen", self.space, 2)
