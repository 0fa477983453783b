import math

import numpy as np
import pytest

from fhci import (
    AdjustmentFactor,
    BootstrapDegenerate,
    InvalidAlpha,
    bootstrap_interval,
    cox_interval,
    direct_interval,
    estimate_variance,
    stats,
)
from fhci.model import eb_estimate, fit_regression

from conftest import Z95, make_dataset, random_dataset


class TestDirect:
    def test_length_pattern_a(self):
        res = direct_interval(0.0, 0.7, 0.05)
        assert res.length == pytest.approx(2 * 1.959964 * math.sqrt(0.7), abs=1e-5)
        assert res.length == pytest.approx(3.27965, abs=1e-4)
        assert res.length == pytest.approx(3.3, abs=0.05)

    def test_length_pattern_b(self):
        res = direct_interval(0.0, 4.0, 0.05)
        assert res.length == pytest.approx(7.8399, abs=1e-4)

    def test_unit_half_width_at_z_one(self):
        alpha = 2.0 * (1.0 - stats.norm_cdf(1.0))
        res = direct_interval(5.0, 1.0, alpha)
        assert res.half_width == pytest.approx(1.0, abs=1e-12)
        assert res.lower == pytest.approx(4.0) and res.upper == pytest.approx(6.0)

    def test_invalid_alpha(self):
        with pytest.raises(InvalidAlpha):
            direct_interval(0.0, 1.0, 0.0)
        with pytest.raises(InvalidAlpha):
            direct_interval(0.0, 1.0, 1.5)


class TestCox:
    def test_degenerate_at_boundary(self):
        # flat data drives the REML estimate to zero
        ds = make_dataset(np.full(10, 1.5), np.ones(10), np.ones((10, 1)))
        res = cox_interval(ds, 0, "reml", 0.05)
        assert res.A_used == 0.0
        assert res.half_width == 0.0
        assert res.lower == res.upper == pytest.approx(1.5)

    def test_center_is_eb_estimate(self, unbalanced):
        est = estimate_variance(unbalanced, AdjustmentFactor.li_lahiri())
        res = cox_interval(unbalanced, 3, est, 0.05)
        beta = fit_regression(unbalanced, est.a_hat, "gls").beta_hat
        eb = eb_estimate(unbalanced, 3, est.a_hat, beta)
        assert 0.5 * (res.lower + res.upper) == pytest.approx(eb.theta_eb, rel=1e-12)
        assert res.half_width == pytest.approx(Z95 * eb.sigma, rel=1e-10)

    def test_length_ordering_balanced(self, balanced15):
        direct = direct_interval(0.0, 0.7, 0.05)
        lens = {}
        for name in ("reml", "li-lahiri", "yl-gls", "yl-ols"):
            lens[name] = cox_interval(balanced15, 0, name, 0.05).length
        assert lens["reml"] <= lens["yl-gls"] + 1e-10
        assert lens["yl-gls"] <= lens["yl-ols"] + 1e-10
        assert all(v < direct.length for v in lens.values())

    def test_shorter_than_direct_everywhere(self):
        rng = np.random.default_rng(8)
        for _ in range(6):
            ds = random_dataset(rng)
            for i in (0, ds.m - 1):
                dlen = direct_interval(float(ds.y[i]), float(ds.D[i]), 0.05).length
                for name in ("reml", "anova", "li-lahiri", "yl-gls", "yl-ols"):
                    assert cox_interval(ds, i, name, 0.05).length < dlen

    def test_estimator_area_mismatch(self, unbalanced):
        est = estimate_variance(unbalanced, AdjustmentFactor.yl_gls(1, Z95))
        with pytest.raises(ValueError):
            cox_interval(unbalanced, 0, est, 0.05)


class TestBootstrap:
    def test_requires_hundred_replicates(self, unbalanced):
        with pytest.raises(ValueError):
            bootstrap_interval(unbalanced, 0, 99, seed=1)

    def test_deterministic_given_seed(self, balanced15):
        r1 = bootstrap_interval(balanced15, 2, 150, alpha=0.05, seed=42)
        r2 = bootstrap_interval(balanced15, 2, 150, alpha=0.05, seed=42)
        assert (r1.lower, r1.upper) == (r2.lower, r2.upper)
        r3 = bootstrap_interval(balanced15, 2, 150, alpha=0.05, seed=43)
        assert (r1.lower, r1.upper) != (r3.lower, r3.upper)

    def test_metadata(self, balanced15):
        res = bootstrap_interval(balanced15, 2, 120, alpha=0.1, seed=7)
        assert res.method == "cll-bootstrap"
        assert res.n_bootstrap == 120
        assert res.level == pytest.approx(0.9)
        assert res.lower < res.upper

    def test_pivot_quantiles_near_z_with_known_variance(self):
        # oracle model: A is known and held fixed, so the pivot is a
        # standard normal up to the O(1/m) coefficient-estimation noise
        rng = np.random.default_rng(314)
        m = 15
        true_a = 1.0
        d = np.full(m, 0.7)
        x = np.ones((m, 1))
        B = 6000
        xb = np.zeros(m)
        from fhci import _backend

        mod = _backend.backend()
        ctx = _backend.make_context(d, x, mod)
        nrm = stats.standard_normals(
            np.random.Generator(np.random.Philox(99)), (B, 2 * m)
        )
        sqa = math.sqrt(true_a)
        sqd = np.sqrt(d)
        pivots = np.empty(B)
        sig = math.sqrt(true_a * d[0] / (true_a + d[0]))
        bh = d[0] / (true_a + d[0])
        for b in range(B):
            theta = xb + sqa * nrm[b, :m]
            ystar = theta + sqd * nrm[b, m:]
            w = np.full(m, 1.0 / (true_a + d[0]))
            beta = float(np.sum(w * ystar) / np.sum(w))
            eb = (1 - bh) * ystar[0] + bh * beta
            pivots[b] = (theta[0] - eb) / sig
        q_lo = stats.hazen_quantile(np.sort(pivots), 0.025)
        q_hi = stats.hazen_quantile(np.sort(pivots), 0.975)
        assert abs(q_lo + Z95) < 0.1
        assert abs(q_hi - Z95) < 0.1

    def test_degenerate_when_estimator_collapses(self):
        # REML-based bootstrap with a tiny positive point estimate: most
        # replicates re-estimate A at the boundary (sigma = 0), which
        # exhausts the redraw budget
        m = 8
        pattern = np.array([-1.0, 1.0] * 4)
        y = math.sqrt(1.1 * 7.0 / 8.0) * pattern  # sample variance 1.1
        ds = make_dataset(y, np.ones(m), np.ones((m, 1)))
        est = estimate_variance(ds, AdjustmentFactor.reml())
        assert est.a_hat == pytest.approx(0.1, abs=1e-6)
        with pytest.raises(BootstrapDegenerate):
            bootstrap_interval(ds, 0, 200, AdjustmentFactor.reml(), 0.05, seed=5)


class TestBatchedCox:
    def test_matches_per_area_calls(self, unbalanced):
        from fhci import cox_intervals_all_areas

        for name in ("li-lahiri", "yl-gls", "yl-ols"):
            batched = cox_intervals_all_areas(unbalanced, name, 0.05)
            for i in (0, unbalanced.m // 2, unbalanced.m - 1):
                single = cox_interval(unbalanced, i, name, 0.05)
                assert batched[i].lower == pytest.approx(single.lower, rel=1e-12)
                assert batched[i].upper == pytest.approx(single.upper, rel=1e-12)
                assert batched[i].method == single.method
