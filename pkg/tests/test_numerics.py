import numpy as np
import pytest

from motionmem import numerics
from motionmem.errors import DegenerateQueryWarning, InvalidArgumentError


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(numerics.softmax(np.zeros(3)), np.full(3, 1 / 3),
                                   atol=1e-15)

    def test_shift_invariance_trivial(self):
        np.testing.assert_allclose(numerics.softmax(np.array([5.0, 5.0])), [0.5, 0.5],
                                   atol=1e-15)

    def test_direct_exponentiation_oracle(self):
        # exp(ln 2) / (exp(ln 2) + exp(0)) = 2/3
        out = numerics.softmax(np.array([np.log(2.0), 0.0]))
        np.testing.assert_allclose(out, [2 / 3, 1 / 3], atol=1e-15)

    def test_sums_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            x = rng.normal(0, 5, size=rng.integers(1, 12))
            p = numerics.softmax(x)
            assert abs(p.sum() - 1.0) < 1e-12
            assert np.all(p > 0)
            shifted = numerics.softmax(x + rng.normal(0, 100))
            np.testing.assert_allclose(p, shifted, atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(InvalidArgumentError):
            numerics.softmax(np.array([]))


class TestSigmoid:
    def test_fixed_point(self):
        assert numerics.sigmoid(np.array([0.0]))[0] == 0.5

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        x = rng.normal(0, 10, size=100)
        np.testing.assert_allclose(numerics.sigmoid(x) + numerics.sigmoid(-x), 1.0,
                                   atol=1e-12)

    def test_ln3_oracle(self):
        # 1 / (1 + exp(-ln 3)) = 3/4
        np.testing.assert_allclose(numerics.sigmoid(np.array([np.log(3.0)])), [0.75],
                                   atol=1e-15)

    def test_range(self):
        x = np.linspace(-30, 30, 301)
        s = numerics.sigmoid(x)
        assert np.all(s > 0) and np.all(s < 1)


class TestCosineSimilarity:
    def test_identity(self):
        v = np.array([0.3, -1.2, 4.0])
        assert numerics.cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_antipodal(self):
        v = np.array([0.3, -1.2, 4.0])
        assert numerics.cosine_similarity(v, -v) == pytest.approx(-1.0, abs=1e-12)

    def test_dot_over_norms_oracle(self):
        got = numerics.cosine_similarity(np.array([1.0, 0.0]), np.array([1.0, 1.0]))
        assert got == pytest.approx(1.0 / np.sqrt(2.0), abs=1e-12)

    def test_bounded(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            a, b = rng.normal(size=(2, 6))
            assert -1 - 1e-12 <= numerics.cosine_similarity(a, b) <= 1 + 1e-12

    def test_zero_norm_policy(self):
        with pytest.warns(DegenerateQueryWarning):
            assert numerics.cosine_similarity(np.zeros(3), np.ones(3)) == 0.0


class TestKLDivergence:
    def test_identity(self):
        p = np.array([0.2, 0.3, 0.5])
        assert numerics.kl_divergence(p, p) == pytest.approx(0.0, abs=1e-12)

    def test_degenerate_onehot(self):
        p = np.array([1.0, 0.0])
        assert numerics.kl_divergence(p, p) == 0.0

    def test_direct_sum_oracle(self):
        p = np.array([0.5, 0.5])
        q = np.array([0.25, 0.75])
        expected = 0.5 * np.log(0.5 / 0.25) + 0.5 * np.log(0.5 / 0.75)
        assert numerics.kl_divergence(p, q) == pytest.approx(expected, abs=1e-14)

    def test_nonnegative_property(self):
        rng = np.random.default_rng(17)
        for _ in range(1000):
            k = int(rng.integers(2, 9))
            p = rng.dirichlet(np.ones(k))
            q = rng.dirichlet(np.ones(k))
            assert numerics.kl_divergence(p, q) >= -1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            numerics.kl_divergence(np.array([1.0]), np.array([0.5, 0.5]))


class TestLinearInterpTime:
    def test_identity(self):
        rng = np.random.default_rng(2)
        seq = rng.normal(size=(5, 3))
        np.testing.assert_array_equal(numerics.linear_interp_time(seq, 5), seq)

    def test_midpoint_oracle(self):
        out = numerics.linear_interp_time(np.array([[0.0], [1.0]]), 3)
        np.testing.assert_allclose(out, [[0.0], [0.5], [1.0]], atol=1e-15)

    def test_constant_stays_constant(self):
        seq = np.full((4, 2), 3.25)
        for t_out in (1, 2, 7, 11):
            np.testing.assert_allclose(numerics.linear_interp_time(seq, t_out), 3.25)

    def test_endpoints_preserved(self):
        rng = np.random.default_rng(8)
        seq = rng.normal(size=(6, 4))
        out = numerics.linear_interp_time(seq, 13)
        np.testing.assert_allclose(out[0], seq[0], atol=1e-12)
        np.testing.assert_allclose(out[-1], seq[-1], atol=1e-12)

    def test_envelope_property(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            seq = rng.normal(size=(int(rng.integers(1, 8)), 3))
            out = numerics.linear_interp_time(seq, int(rng.integers(1, 12)))
            assert np.all(out <= seq.max(axis=0) + 1e-12)
            assert np.all(out >= seq.min(axis=0) - 1e-12)

    def test_empty_rejected(self):
        with pytest.raises(InvalidArgumentError):
            numerics.linear_interp_time(np.zeros((0, 2)), 3)


class TestGradCheck:
    def test_quadratic_closed_form(self):
        def op(p):
            x = p["x"]
            return float(np.sum(x * x)), {"x": 2.0 * x}

        report = numerics.grad_check(op, {"x": np.array([3.0])}, name="x_squared")
        assert report.max_rel_error < 1e-9
        # analytic derivative at x=3 is 6
        _, grads = op({"x": np.array([3.0])})
        assert grads["x"][0] == 6.0

    def test_constant_loss_zero_gradient(self):
        def op(p):
            return 1.5, {"x": np.zeros_like(p["x"])}

        report = numerics.grad_check(op, {"x": np.array([0.1, -0.2])})
        assert report.max_rel_error == 0.0

    def test_non_scalar_loss_rejected(self):
        def op(p):
            return np.array([1.0, 2.0]), {}

        with pytest.raises(InvalidArgumentError):
            numerics.grad_check(op, {"x": np.array([1.0])})

    def test_wrong_gradient_detected(self):
        def op(p):
            x = p["x"]
            return float(np.sum(x * x)), {"x": 3.0 * x}  # deliberately wrong

        report = numerics.grad_check(op, {"x": np.array([1.0])})
        assert report.max_rel_error > 0.1


class TestTensorConstruction:
    def test_shape_checked(self):
        with pytest.raises(InvalidArgumentError):
            numerics.as_tensor([1.0, 2.0, 3.0], shape=(2, 2))

    def test_nan_rejected_in_checked_mode(self):
        with pytest.raises(InvalidArgumentError):
            numerics.as_tensor([1.0, np.nan])
        arr = numerics.as_tensor([1.0, np.nan], checked=False)
        assert np.isnan(arr[1])
