import numpy as np
import pytest

from attnsi.dual import Dual, concat, erf, exp, softmax, softmax_rows, sqrt, tanh
from attnsi.errors import DomainError


def d(v, g=0.0):
    return Dual(np.asarray(v, dtype=float), np.asarray(g, dtype=float))


class TestChainRuleExamples:
    def test_mul_square(self):
        out = d(2.0, 1.0) * d(2.0, 1.0)
        assert out.val == 4.0 and out.dot == 4.0

    def test_exp_at_zero(self):
        out = exp(d(0.0, 3.0))
        assert out.val == 1.0 and out.dot == 3.0

    def test_div_constants(self):
        out = d(1.0, 0.0) / d(2.0, 0.0)
        assert out.val == 0.5 and out.dot == 0.0

    def test_zero_seed_stays_zero(self):
        x = d(0.7, 0.0)
        y = exp(x * x + 2.0) / sqrt(x + 1.0) - tanh(x)
        assert y.dot == 0.0

    def test_composite_chain_rule_exact(self):
        # g(h(z)) with h(z) = z^2, g(u) = exp(u): dg/dz = exp(z^2) * 2z
        z = d(1.3, 1.0)
        out = exp(z * z)
        assert out.dot == pytest.approx(np.exp(1.3**2) * 2 * 1.3, rel=1e-15)


class TestDomainErrors:
    def test_division_by_zero_value(self):
        with pytest.raises(DomainError):
            d(1.0, 1.0) / d(0.0, 1.0)

    def test_sqrt_negative(self):
        with pytest.raises(DomainError):
            sqrt(d(-1.0, 1.0))

    def test_array_division_any_zero(self):
        with pytest.raises(DomainError):
            d([1.0, 1.0], [0.0, 0.0]) / d([1.0, 0.0], [0.0, 0.0])


def _random_scalar_program(rng):
    """A random composite built from the op set, as z -> Dual."""
    c1, c2, c3 = rng.uniform(0.5, 1.5, size=3)

    def fn(z):
        x = z * c1 + 0.2
        y = exp(x * 0.3) + sqrt(x * x + 1.0)
        w = tanh(y * 0.5) + erf(x)
        return w / (y + 2.0) + (x * w) * c2 - c3 * x

    return fn


class TestDerivativeVsFiniteDifference:
    @pytest.mark.parametrize("seed", range(12))
    def test_random_programs(self, seed):
        rng = np.random.default_rng(seed)
        fn = _random_scalar_program(rng)
        z0 = rng.uniform(-2.0, 2.0)
        out = fn(Dual(np.float64(z0), np.float64(1.0)))
        h = 1e-6
        fd = (fn(np.float64(z0 + h)) - fn(np.float64(z0 - h))) / (2 * h)
        assert out.dot == pytest.approx(fd, rel=1e-4)


class TestArrayOps:
    def test_matmul_product_rule(self):
        rng = np.random.default_rng(0)
        a, da = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        b, db = rng.standard_normal((4, 2)), rng.standard_normal((4, 2))
        out = Dual(a, da) @ Dual(b, db)
        np.testing.assert_allclose(out.val, a @ b, rtol=1e-15)
        np.testing.assert_allclose(out.dot, da @ b + a @ db, rtol=1e-14)

    def test_matmul_constant_fused(self):
        rng = np.random.default_rng(1)
        a, da = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
        w = rng.standard_normal((3, 7))
        out = Dual(a, da) @ w
        np.testing.assert_array_equal(out.val, a @ w)
        np.testing.assert_array_equal(out.dot, da @ w)

    def test_min_max_carry_extremal_derivative(self):
        x = Dual(np.array([3.0, 1.0, 2.0]), np.array([10.0, 20.0, 30.0]))
        mn = x.min(axis=-1)
        mx = x.max(axis=-1)
        assert mn.val == 1.0 and mn.dot == 20.0
        assert mx.val == 3.0 and mx.dot == 10.0

    def test_concat_mixed(self):
        x = Dual(np.ones((2, 2)), np.full((2, 2), 5.0))
        const = np.zeros((1, 2))
        out = concat([const, x], axis=0)
        assert out.val.shape == (3, 2)
        np.testing.assert_array_equal(out.dot[0], 0.0)
        np.testing.assert_array_equal(out.dot[1:], 5.0)


class TestSoftmax:
    def test_uniform(self):
        out = softmax_rows(np.zeros((1, 3)))
        np.testing.assert_allclose(out, 1.0 / 3.0, rtol=1e-15)

    def test_shift_invariance_no_overflow(self):
        out = softmax_rows(np.array([[1000.0, 0.0]]))
        assert np.isfinite(out).all()
        assert out[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert out[0, 1] == pytest.approx(0.0, abs=1e-12)

    def test_softmax_of_logs(self):
        out = softmax_rows(np.log(np.array([[1.0, 2.0, 3.0]])))
        np.testing.assert_allclose(out, [[1 / 6, 2 / 6, 3 / 6]], rtol=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_rows_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        m = rng.normal(0, 50.0, size=(8, 13))
        out = softmax_rows(m)
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)

    def test_dual_softmax_derivative(self):
        rng = np.random.default_rng(3)
        v = rng.standard_normal(6)
        g = rng.standard_normal(6)
        out = softmax(Dual(v, g), axis=-1)
        h = 1e-7
        fd = (softmax(v + h * g) - softmax(v - h * g)) / (2 * h)
        np.testing.assert_allclose(out.dot, fd, atol=1e-6)
        np.testing.assert_allclose(out.val.sum(), 1.0, atol=1e-12)
