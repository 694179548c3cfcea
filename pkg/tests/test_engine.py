import math

import numpy as np
import pytest

from attnsi.engine import (
    AttentionLineFunctions,
    CallableLineFunctions,
    Covariance,
    GridSearchConfig,
    adaptive_step,
    bonferroni_p,
    build_line,
    eta_vector,
    f_values,
    grid_width,
    identify_region,
    naive_p,
    permutation_p,
    run_single_test,
    selective_p,
)
from attnsi.engine import TestSetup as Setup
from attnsi.engine import test_statistic as contrast_stat
from attnsi.errors import (
    CovarianceError,
    DegenerateRegionError,
    RegionConsistencyError,
)
from attnsi.gaussian import gauss_tail, truncated_two_sided_p
from attnsi.rollout import AttentionRegion, make_attention_fn, threshold_region


def region_of(pixels, n, tau=0.6):
    return AttentionRegion(pixels=frozenset(pixels), threshold=tau)


class TestEtaVector:
    def test_half_split(self):
        np.testing.assert_allclose(
            eta_vector(region_of({0, 1}, 4), 4), [0.5, 0.5, -0.5, -0.5]
        )

    def test_single_pixel(self):
        np.testing.assert_allclose(
            eta_vector(region_of({0}, 3), 3), [1.0, -0.5, -0.5]
        )

    @pytest.mark.parametrize("seed", range(5))
    def test_sums_to_zero(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 64))
        m = int(rng.integers(1, n))
        pixels = rng.choice(n, size=m, replace=False)
        eta = eta_vector(region_of(pixels, n), n)
        assert eta.sum() == pytest.approx(0.0, abs=1e-12)

    def test_degenerate(self):
        with pytest.raises(DegenerateRegionError):
            eta_vector(region_of(set(), 4), 4)
        with pytest.raises(DegenerateRegionError):
            eta_vector(region_of({0, 1, 2, 3}, 4), 4)


class TestCovariance:
    @pytest.mark.parametrize("n", [5, 17])
    def test_power_matvec_matches_dense(self, n):
        rng = np.random.default_rng(0)
        rho = 0.5
        cov = Covariance.power(rho)
        dense = rho ** np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
        for _ in range(5):
            v = rng.standard_normal(n)
            np.testing.assert_allclose(cov.matvec(v), dense @ v, atol=1e-12)

    def test_power_correlate_covariance(self):
        cov = Covariance.power(0.5)
        rng = np.random.default_rng(1)
        draws = np.stack(
            [cov.correlate(rng.standard_normal(8)) for _ in range(20000)]
        )
        emp = np.cov(draws.T)
        dense = 0.5 ** np.abs(np.subtract.outer(np.arange(8), np.arange(8)))
        assert np.abs(emp - dense).max() < 0.05

    def test_explicit_requires_spd(self):
        bad = np.array([[1.0, 2.0], [2.0, 1.0]])  # symmetric, not PD
        cov = Covariance.explicit(bad)
        with pytest.raises(CovarianceError):
            cov.correlate(np.ones(2))

    def test_explicit_asymmetric_rejected(self):
        with pytest.raises(CovarianceError):
            Covariance.explicit(np.array([[1.0, 0.5], [0.2, 1.0]]))

    def test_scaled(self):
        cov = Covariance.scaled(4.0)
        np.testing.assert_allclose(cov.matvec(np.ones(3)), 4.0)
        assert cov.quad(np.array([1.0, 0.0, 0.0])) == 4.0


class TestTestStatistic:
    def test_zero_image(self):
        setup = Setup(np.zeros(4), Covariance.identity(), region_of({0, 1}, 4))
        assert contrast_stat(setup) == 0.0

    def test_hand_example(self):
        setup = Setup(
            np.array([1.0, 1.0, 0.0, 0.0]),
            Covariance.identity(),
            region_of({0, 1}, 4),
        )
        # eta = (.5,.5,-.5,-.5); eta'X = 1; eta'eta = 1
        assert contrast_stat(setup) == pytest.approx(1.0, rel=1e-14)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_dense_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = 20
        a = rng.standard_normal((n, n))
        sigma = a @ a.T + n * np.eye(n)
        cov = Covariance.explicit(sigma)
        x = rng.standard_normal(n)
        m = int(rng.integers(1, n))
        region = region_of(rng.choice(n, size=m, replace=False), n)
        eta = eta_vector(region, n)
        expected = (eta @ x) / math.sqrt(eta @ sigma @ eta)
        got = contrast_stat(Setup(x, cov, region))
        assert got == pytest.approx(expected, rel=1e-10)


class TestBuildLine:
    @pytest.mark.parametrize("kind", ["identity", "power", "explicit"])
    def test_reconstruction_and_orthogonality(self, kind):
        rng = np.random.default_rng(3)
        n = 16
        if kind == "identity":
            cov = Covariance.identity()
        elif kind == "power":
            cov = Covariance.power(0.5)
        else:
            a = rng.standard_normal((n, n))
            cov = Covariance.explicit(a @ a.T + n * np.eye(n))
        x = rng.standard_normal(n)
        region = region_of({1, 5, 6}, n)
        line = build_line(Setup(x, cov, region))
        np.testing.assert_allclose(line.a + line.b * line.z_obs, x, atol=1e-8)
        eta = eta_vector(region, n)
        assert eta @ line.a == pytest.approx(0.0, abs=1e-8)

    def test_identity_b_is_unit_eta(self):
        n = 8
        x = np.random.default_rng(4).standard_normal(n)
        region = region_of({0, 3}, n)
        line = build_line(Setup(x, Covariance.identity(), region))
        eta = eta_vector(region, n)
        np.testing.assert_allclose(line.b, eta / np.linalg.norm(eta), atol=1e-12)


class TestFValues:
    def test_observed_point_is_member(self, small_config, small_weights):
        rng = np.random.default_rng(5)
        img = rng.standard_normal(small_config.n_pixels)
        fn = make_attention_fn(small_config, small_weights)
        region = threshold_region(fn(img), 0.6)
        setup = Setup(img, Covariance.identity(), region)
        line = build_line(setup)
        vals, ders = f_values(line, fn, 0.6, region, line.z_obs)
        assert np.all(vals < 0.0)
        assert vals.shape == ders.shape == (small_config.n_pixels,)

    def test_sign_convention(self, small_config, small_weights):
        rng = np.random.default_rng(6)
        img = rng.standard_normal(small_config.n_pixels)
        fn = make_attention_fn(small_config, small_weights)
        scores = fn(img)
        region = threshold_region(scores, 0.6)
        setup = Setup(img, Covariance.identity(), region)
        line = build_line(setup)
        vals, _ = f_values(line, fn, 0.6, region, line.z_obs)
        mask = region.mask(small_config.n_pixels)
        np.testing.assert_allclose(vals[mask], 0.6 - scores[mask], atol=1e-8)
        np.testing.assert_allclose(vals[~mask], scores[~mask] - 0.6, atol=1e-8)

    def test_derivatives_match_finite_differences(self, small_config, small_weights):
        rng = np.random.default_rng(7)
        fn = make_attention_fn(small_config, small_weights)
        img = rng.standard_normal(small_config.n_pixels)
        region = threshold_region(fn(img), 0.6)
        setup = Setup(img, Covariance.identity(), region)
        line = build_line(setup)
        fns = AttentionLineFunctions(fn, line, 0.6, region)
        for z in (-1.2, 0.1, line.z_obs):
            _, ders = fns.values_and_derivs(z)
            h = 1e-6
            fd = (fns.values(z + h) - fns.values(z - h)) / (2 * h)
            np.testing.assert_allclose(ders, fd, rtol=1e-4, atol=1e-7)


class TestAdaptiveStep:
    CFG = GridSearchConfig()

    def test_near_case_single_f(self):
        # |f| = 0.2 with unit Lipschitz: d = 0.2, clamp keeps 0.2
        step = adaptive_step(
            np.array([-0.2]), None, True, z=0.0, z_obs=0.05, cfg=self.CFG
        )
        assert step == pytest.approx(0.2)

    def test_far_case_ratio_clamped(self):
        # f = -0.3, f' = 0.01: candidate (f f' < 0), L = 0.1, d = 3 -> 0.2
        step = adaptive_step(
            np.array([-0.3]), np.array([0.01]), True, z=5.0, z_obs=0.0, cfg=self.CFG
        )
        assert step == pytest.approx(0.2)
        d = grid_width(
            np.array([-0.3]), np.array([0.01]), True, 5.0, 0.0, self.CFG
        )
        assert d == pytest.approx(3.0)

    def test_far_case_no_candidate(self):
        # every f_i f_i' >= 0: receding from zero, step is eps_max
        step = adaptive_step(
            np.array([-0.3, -0.1]),
            np.array([-0.02, 0.0]),
            True,
            z=5.0,
            z_obs=0.0,
            cfg=self.CFG,
        )
        assert step == pytest.approx(self.CFG.eps_max)

    def test_eps_min_floor(self):
        step = adaptive_step(
            np.array([-1e-9]), None, True, z=0.0, z_obs=0.0, cfg=self.CFG
        )
        assert step == pytest.approx(self.CFG.eps_min)

    def test_outside_uses_max_over_violations(self):
        # near case, outside: d = max over f_i >= 0 of |f_i|
        d = grid_width(
            np.array([0.3, 0.05, -0.2]), None, False, 0.0, 0.05, self.CFG
        )
        assert d == pytest.approx(0.3)

    def test_far_zero_derivative_excluded(self):
        # f' = 0 pixels cannot constrain the step (flat f never crosses)
        step = adaptive_step(
            np.array([-1e-6]), np.array([0.0]), True, z=5.0, z_obs=0.0, cfg=self.CFG
        )
        assert step == pytest.approx(self.CFG.eps_max)


def parabola_fns():
    """f_1(z) = z^2 - 1: membership region exactly (-1, 1)."""
    return CallableLineFunctions(
        lambda z: (np.array([z * z - 1.0]), np.array([2.0 * z]))
    )


class TestIdentifyRegion:
    def test_parabola_region_recovered(self):
        cfg = GridSearchConfig()
        region = identify_region(parabola_fns(), z_obs=0.3, cfg=cfg)
        assert region.n_intervals == 1
        iv = region.intervals[0]
        assert iv.lo == pytest.approx(-1.0, abs=1e-6)
        assert iv.hi == pytest.approx(1.0, abs=1e-6)

    def test_j_window_subset(self):
        cfg = GridSearchConfig()
        fns = parabola_fns()
        region = identify_region(fns, z_obs=0.3, cfg=cfg)
        j = region.j_window
        assert region.contains(j.lo) and region.contains(j.hi)
        assert region.contains(0.3)

    def test_fixed_and_adaptive_boundaries_agree(self):
        adaptive = identify_region(
            parabola_fns(), 0.3, GridSearchConfig(mode="adaptive")
        )
        fixed = identify_region(
            parabola_fns(), 0.3, GridSearchConfig(mode="fixed", fixed_eps=1e-3)
        )
        for iva, ivf in zip(adaptive.intervals, fixed.intervals):
            assert abs(iva.lo - ivf.lo) < 2e-3
            assert abs(iva.hi - ivf.hi) < 2e-3

    def test_combination_mode(self):
        combo = identify_region(
            parabola_fns(), 0.3, GridSearchConfig(mode="combination")
        )
        assert combo.n_intervals == 1
        assert combo.intervals[0].lo == pytest.approx(-1.0, abs=1e-6)
        assert combo.intervals[0].hi == pytest.approx(1.0, abs=1e-6)

    def test_fixed_eval_count_is_grid_size(self):
        fns = parabola_fns()
        cfg = GridSearchConfig(mode="fixed", fixed_eps=1e-3, half_width=4.0)
        identify_region(fns, 0.3, cfg)
        # 2S/eps grid points plus boundary refinement and the z_obs check
        assert abs(fns.n_evals - 8000) < 150

    def test_disjoint_region(self):
        # f_1 = sin-like double well: region {z : (z^2-1)(z^2-9) < 0 } = two
        # intervals (-3,-1), (1,3)
        fns = CallableLineFunctions(
            lambda z: (
                np.array([(z * z - 1.0) * (z * z - 9.0)]),
                np.array([2 * z * (z * z - 9.0) + (z * z - 1.0) * 2 * z]),
            )
        )
        cfg = GridSearchConfig(half_width=6.0)
        region = identify_region(fns, z_obs=2.0, cfg=cfg)
        assert region.n_intervals == 2
        (a, b), (c, d) = [(iv.lo, iv.hi) for iv in region.intervals]
        assert a == pytest.approx(-3.0, abs=1e-6)
        assert b == pytest.approx(-1.0, abs=1e-6)
        assert c == pytest.approx(1.0, abs=1e-6)
        assert d == pytest.approx(3.0, abs=1e-6)

    def test_observed_point_outside_raises(self):
        fns = parabola_fns()
        with pytest.raises(RegionConsistencyError):
            identify_region(fns, z_obs=2.0, cfg=GridSearchConfig())

    def test_whole_window_region_matches_naive(self):
        fns = CallableLineFunctions(
            lambda z: (np.array([-1.0]), np.array([0.0]))
        )
        z0 = 0.8
        region = identify_region(fns, z0, GridSearchConfig())
        p = truncated_two_sided_p(z0, region.intervals)
        assert p == pytest.approx(naive_p(z0), abs=1e-12)

    def test_lemma_step_safety_smoke(self):
        # every accepted step's unfloored width keeps membership constant
        from attnsi.engine import _walk_adaptive

        fns = parabola_fns()
        cfg = GridSearchConfig(half_width=4.0)
        points, members, records = _walk_adaptive(fns, 0.3, 4.0, cfg)
        rng = np.random.default_rng(0)
        for rec in records[:: max(1, len(records) // 50)]:
            width = min(cfg.eps_max, rec.d_raw)
            for z in rng.uniform(rec.z, rec.z + width, size=20):
                assert fns.membership(float(z)) == rec.member


class TestPValues:
    def test_naive_examples(self):
        assert naive_p(0.0) == 1.0
        assert naive_p(-40.0) == pytest.approx(0.0, abs=1e-300)
        # frozen from the quadrature oracle: 2 * P(Z > 1.96)
        assert naive_p(1.96) == pytest.approx(0.04999579029644088, rel=1e-11)

    def test_bonferroni_examples(self):
        assert bonferroni_p(0.5, 8) == 1.0
        assert bonferroni_p(0.0, 12) == 0.0
        # 2^256 * 1e-100 = 1.16e-23 stays below 1 ...
        assert bonferroni_p(1e-100, 256) == pytest.approx(1.1579208923731424e-23, rel=1e-12)
        # ... while n = 1024 saturates; 2^1024 overflows a double, so this
        # exercises the log-space branch
        assert bonferroni_p(1e-100, 1024) == 1.0

    def test_bonferroni_subcritical(self):
        assert bonferroni_p(2.0**-20, 10) == pytest.approx(2.0**-10, rel=1e-12)

    def test_bonferroni_at_least_naive(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            p = float(rng.uniform(0, 1)) ** 10
            n = int(rng.integers(1, 300))
            assert bonferroni_p(p, n) >= p


class TestSelectiveP:
    def test_end_to_end_contract(self, small_config, small_weights):
        rng = np.random.default_rng(10)
        fn = make_attention_fn(small_config, small_weights)
        img = rng.standard_normal(small_config.n_pixels)
        result = run_single_test(img, Covariance.identity(), fn, 0.6)
        assert 0.0 <= result.p_selective <= 1.0
        assert 0.0 <= result.p_naive <= 1.0
        assert result.p_bonferroni >= result.p_naive
        assert result.region.contains(result.z_obs, tol=1e-9)
        assert result.n_model_evals > 0
        assert result.wall_time_s > 0

    def test_selective_p_with_explicit_setup(self, small_config, small_weights):
        rng = np.random.default_rng(11)
        fn = make_attention_fn(small_config, small_weights)
        img = rng.standard_normal(small_config.n_pixels)
        region = threshold_region(fn(img), 0.6)
        setup = Setup(img, Covariance.identity(), region)
        result = selective_p(setup, fn)
        assert 0.0 <= result.p_selective <= 1.0

    def test_relabelling_invariance(self):
        rng = np.random.default_rng(12)
        n = 12
        a = rng.standard_normal((n, n))
        sigma = a @ a.T + n * np.eye(n)
        x = rng.standard_normal(n)
        pixels = [1, 4, 7]
        perm = rng.permutation(n)
        setup = Setup(x, Covariance.explicit(sigma), region_of(pixels, n))
        z1 = contrast_stat(setup)
        inv = np.argsort(perm)
        setup2 = Setup(
            x[perm],
            Covariance.explicit(sigma[np.ix_(perm, perm)]),
            region_of([int(inv[p]) for p in pixels], n),
        )
        z2 = contrast_stat(setup2)
        assert z1 == pytest.approx(z2, abs=1e-12)
        assert naive_p(z1) == pytest.approx(naive_p(z2), abs=1e-12)


class TestPermutation:
    def test_deterministic(self, small_config, small_weights):
        rng = np.random.default_rng(13)
        fn = make_attention_fn(small_config, small_weights)
        img = rng.standard_normal(small_config.n_pixels)
        region = threshold_region(fn(img), 0.6)
        setup = Setup(img, Covariance.identity(), region)
        r1 = permutation_p(setup, fn, n_perm=25, seed=99)
        r2 = permutation_p(setup, fn, n_perm=25, seed=99)
        assert r1 == r2
        assert 0.0 <= r1.p_value <= 1.0

    def test_identity_permutation_strict_inequality(
        self, small_config, small_weights, monkeypatch
    ):
        rng = np.random.default_rng(14)
        fn = make_attention_fn(small_config, small_weights)
        img = rng.standard_normal(small_config.n_pixels)
        region = threshold_region(fn(img), 0.6)
        setup = Setup(img, Covariance.identity(), region)
        class _IdentityRng:
            def permutation(self, n):
                return np.arange(n)

        monkeypatch.setattr(
            "attnsi.engine.np.random.default_rng", lambda seed: _IdentityRng()
        )
        result = permutation_p(setup, fn, n_perm=1, seed=0)
        # identity permutation reproduces |z_obs| exactly; strict > gives 0
        assert result.p_value == 0.0
