import math

import numpy as np
import pytest

from ncmfair.autodiff import Tensor, grad
from ncmfair.errors import ArgumentError, ConfigError
from ncmfair.kernels import (
    Kernel,
    imq,
    imq_gram,
    median_heuristic,
    mmd2_mean_vs_mean,
    mmd2_mean_vs_point,
    mmd2_mean_vs_mean_t,
    mmd2_mean_vs_point_t,
)
from ncmfair.rng import RngStream

from oracles import (
    central_difference_grads,
    max_relative_error,
    naive_median_sqdist,
    naive_mmd2_mean_vs_mean,
    naive_mmd2_mean_vs_point,
)


class TestImq:
    def test_self_similarity(self):
        x = np.array([0.3, -1.2, 4.0])
        assert imq(x, x, 1.0) == 1.0

    def test_known_value(self):
        # ||x-y||^2 = 1 + 2 = 3, (1+3)^(-1/2) = 0.5
        assert imq((0.0, 0.0), (1.0, math.sqrt(2.0)), 1.0) == pytest.approx(0.5, abs=1e-15)

    def test_scalar_inputs(self):
        assert imq((0.0,), (2.0,), 0.25) == pytest.approx((0.25 + 4.0) ** -0.5, abs=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(ArgumentError):
            imq((0.0, 1.0), (0.0,), 1.0)

    def test_bad_rho(self):
        with pytest.raises(ConfigError):
            imq((0.0,), (1.0,), 0.0)
        with pytest.raises(ConfigError):
            Kernel(-1.0)

    def test_bounds_and_symmetry(self):
        rng = RngStream(42, 0)
        for _ in range(50):
            rho = float(rng.uniform(0.1, 5.0, ()))
            x = rng.standard_normal(3)
            y = rng.standard_normal(3)
            kxy = imq(x, y, rho)
            assert 0.0 < kxy <= rho ** -0.5
            assert kxy == imq(y, x, rho)
            assert kxy < imq(x, x, rho)


class TestMmd2MeanVsPoint:
    def test_single_identical_sample(self):
        x = np.array([1.0, 2.0])
        assert mmd2_mean_vs_point(x[None, :], x, Kernel(1.0)) == 0.0

    def test_repeated_identical_samples(self):
        x = np.array([0.5, -0.25])
        assert mmd2_mean_vs_point(np.stack([x, x]), x, Kernel(2.0)) == pytest.approx(0.0, abs=1e-14)

    def test_matches_naive_oracle(self):
        rng = RngStream(7, 0)
        s = rng.standard_normal((3, 2))
        t = rng.standard_normal(2)
        got = mmd2_mean_vs_point(s, t, Kernel(1.5))
        want = naive_mmd2_mean_vs_point(s, t, 1.5)
        assert got == pytest.approx(want, rel=1e-12)

    def test_empty_samples_rejected(self):
        with pytest.raises(ArgumentError):
            mmd2_mean_vs_point(np.zeros((0, 2)), np.zeros(2), Kernel(1.0))


class TestMmd2MeanVsMean:
    def test_identical_sets_zero(self):
        rng = RngStream(3, 0)
        a = rng.standard_normal((5, 3))
        assert mmd2_mean_vs_mean(a, a, Kernel(1.0)) <= 1e-12

    def test_two_singletons(self):
        # 1 - 2/sqrt(2) + 1
        got = mmd2_mean_vs_mean(np.array([[0.0]]), np.array([[1.0]]), Kernel(1.0))
        assert got == pytest.approx(2.0 - 2.0 / math.sqrt(2.0), abs=1e-12)

    def test_matches_naive_oracle(self):
        rng = RngStream(11, 0)
        a = rng.standard_normal((4, 3))
        b = rng.standard_normal((4, 3))
        got = mmd2_mean_vs_mean(a, b, Kernel(0.8))
        want = naive_mmd2_mean_vs_mean(a, b, 0.8)
        assert got == pytest.approx(want, rel=1e-12)

    def test_exact_symmetry(self):
        rng = RngStream(13, 0)
        for _ in range(20):
            a = rng.standard_normal((5, 2))
            b = rng.standard_normal((7, 2))
            k = Kernel(float(rng.uniform(0.2, 3.0, ())))
            assert mmd2_mean_vs_mean(a, b, k) == mmd2_mean_vs_mean(b, a, k)

    def test_dimension_mismatch(self):
        with pytest.raises(ArgumentError):
            mmd2_mean_vs_mean(np.zeros((2, 2)), np.zeros((2, 3)), Kernel(1.0))


def test_estimator_equivalence_100_instances():
    """Both MMD² estimators agree with naive Gram-matrix oracles on 100
    random instances (n, m <= 16, d <= 8) to <= 1e-10 relative error."""
    rng = RngStream(2024, 0)
    for trial in range(100):
        d = int(rng.integers(1, 9, ()))
        m = int(rng.integers(1, 17, ()))
        n = int(rng.integers(1, 17, ()))
        rho = float(rng.uniform(0.1, 10.0, ()))
        a = 3.0 * rng.standard_normal((m, d))
        b = 3.0 * rng.standard_normal((n, d))
        t = 3.0 * rng.standard_normal(d)
        got_p = mmd2_mean_vs_point(a, t, Kernel(rho))
        want_p = naive_mmd2_mean_vs_point(a, t, rho)
        assert got_p == pytest.approx(want_p, rel=1e-10, abs=1e-12)
        got_m = mmd2_mean_vs_mean(a, b, Kernel(rho))
        want_m = naive_mmd2_mean_vs_mean(a, b, rho)
        assert got_m == pytest.approx(want_m, rel=1e-10, abs=1e-12)


class TestMedianHeuristic:
    def test_single_pair(self):
        assert median_heuristic(np.array([[0.0], [2.0]])) == 4.0

    def test_identical_rows_fallback(self):
        assert median_heuristic(np.ones((5, 3))) == 1.0

    def test_matches_bruteforce(self):
        rng = RngStream(5, 0)
        s = rng.standard_normal((5, 3))
        assert median_heuristic(s) == pytest.approx(naive_median_sqdist(s), rel=1e-12)

    def test_needs_two_rows(self):
        with pytest.raises(ArgumentError):
            median_heuristic(np.zeros((1, 2)))

    def test_positive(self):
        rng = RngStream(6, 0)
        assert median_heuristic(rng.standard_normal((100, 4))) > 0.0


class TestDifferentiability:
    def test_mean_vs_point_gradient(self):
        rng = RngStream(21, 0)
        s_data = rng.standard_normal((4, 3))
        t_data = rng.standard_normal(3)
        kern = Kernel(1.2)
        s = Tensor(s_data.copy(), requires_grad=True)

        loss = mmd2_mean_vs_point_t(s, t_data, kern)
        (analytic,) = grad(loss, [s])
        numeric = central_difference_grads(
            lambda: mmd2_mean_vs_point(s.data, t_data, kern), [s]
        )
        assert max_relative_error([analytic], numeric) <= 1e-4

    def test_mean_vs_mean_gradient(self):
        rng = RngStream(22, 0)
        a = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        b = Tensor(rng.standard_normal((5, 2)), requires_grad=True)
        kern = Kernel(0.7)
        loss = mmd2_mean_vs_mean_t(a, b, kern)
        analytic = grad(loss, [a, b])
        numeric = central_difference_grads(
            lambda: mmd2_mean_vs_mean(a.data, b.data, kern), [a, b]
        )
        assert max_relative_error(analytic, numeric) <= 1e-4

    def test_gram_matches_pointwise_kernel(self):
        rng = RngStream(23, 0)
        x = rng.standard_normal((3, 2))
        y = rng.standard_normal((4, 2))
        gram = imq_gram(x, y, 1.3).data
        for i in range(3):
            for j in range(4):
                assert gram[i, j] == pytest.approx(imq(x[i], y[j], 1.3), rel=1e-14)

    def test_batched_gram_matches_loop(self):
        rng = RngStream(24, 0)
        x = rng.standard_normal((3, 4, 2))
        y = rng.standard_normal((3, 5, 2))
        batched = imq_gram(x, y, 0.9).data
        for g in range(3):
            single = imq_gram(x[g], y[g], 0.9).data
            np.testing.assert_allclose(batched[g], single, rtol=1e-14)
