import math

import numpy as np
import pytest
from scipy.integrate import quad

from fhci import (
    AdjustmentFactor,
    NotBalanced,
    SingularAtZero,
    UniquenessConditionViolated,
    UniquenessConditionWarning,
    adjusted_score,
    anova_estimate,
    balanced_quadratic_root,
    estimate_variance,
    log_adjustment,
    log_adjustment_derivative,
    reml_log_likelihood,
    reml_score,
    uniqueness_condition_holds,
)

from conftest import (
    Z95,
    make_dataset,
    oracle_reml_loglik,
    oracle_reml_score,
    random_dataset,
)

ALL_KINDS = (
    AdjustmentFactor.reml(),
    AdjustmentFactor.li_lahiri(),
    AdjustmentFactor.yl_gls(2, Z95),
    AdjustmentFactor.yl_ols(2, Z95),
)


class TestRemlLogLikelihood:
    def test_zero_residuals_closed_form(self):
        ds = make_dataset([0.0, 0.0], [1.0, 2.0], np.ones((2, 1)))
        for a in (0.0, 0.5, 3.0):
            v = a + ds.D
            expected = -0.5 * math.log(np.sum(1.0 / v)) - 0.5 * np.sum(np.log(v))
            assert reml_log_likelihood(ds, a) == pytest.approx(expected, rel=1e-12)

    def test_quadratic_form_hand_value(self):
        # common mean, D = 1, A = 1: y'Py = sum (y - ybar)^2 / 2
        ds = make_dataset([1.0, 2.0, 3.0], np.ones(3), np.ones((3, 1)))
        got = reml_log_likelihood(ds, 1.0)
        expected = oracle_reml_loglik(ds.y, ds.D, ds.X, 1.0)
        assert got == pytest.approx(expected, rel=1e-12)
        # isolate y'Py - fixed part
        fixed = oracle_reml_loglik(np.zeros(3), ds.D, ds.X, 1.0)
        ypy = -2.0 * (got - fixed)
        assert ypy == pytest.approx(1.0, rel=1e-12)

    def test_matches_explicit_projection_oracle(self, unbalanced):
        for a in (0.0, 0.3, 1.0, 4.0):
            assert reml_log_likelihood(unbalanced, a) == pytest.approx(
                oracle_reml_loglik(unbalanced.y, unbalanced.D, unbalanced.X, a),
                rel=1e-10,
            )

    def test_grid_matches_integrated_score(self, unbalanced):
        # l(b) - l(a) vs quadrature of the score
        grid = [0.2, 0.7, 1.5, 3.0]
        for a, b in zip(grid[:-1], grid[1:]):
            delta = reml_log_likelihood(unbalanced, b) - reml_log_likelihood(
                unbalanced, a
            )
            integral, _ = quad(
                lambda t: reml_score(unbalanced, t), a, b, epsabs=1e-12, epsrel=1e-12
            )
            assert delta == pytest.approx(integral, abs=1e-6)


class TestRemlScore:
    def test_matches_projection_oracle(self, unbalanced):
        for a in (0.0, 0.4, 1.1, 5.0):
            assert reml_score(unbalanced, a) == pytest.approx(
                oracle_reml_score(unbalanced.y, unbalanced.D, unbalanced.X, a),
                rel=1e-10,
            )

    def test_finite_difference_of_loglik(self, unbalanced):
        for a in (0.5, 1.0, 2.5):
            h = 1e-5 * (1.0 + a)
            fd = (
                reml_log_likelihood(unbalanced, a + h)
                - reml_log_likelihood(unbalanced, a - h)
            ) / (2 * h)
            s = reml_score(unbalanced, a)
            assert fd == pytest.approx(s, rel=1e-6)

    def test_negative_far_out(self, unbalanced):
        a = 1e6 * float(unbalanced.D.max())
        s = reml_score(unbalanced, a)
        assert s < 0
        approx = -(unbalanced.m - unbalanced.p) / (2.0 * a)
        assert s == pytest.approx(approx, rel=0.01)

    def test_balanced_root_is_anova(self, balanced15):
        # balanced common mean: the interior REML stationary point equals
        # the untruncated moment estimate, so the truncated ones agree
        est = estimate_variance(balanced15, AdjustmentFactor.reml())
        assert est.a_hat == pytest.approx(anova_estimate(balanced15), abs=1e-9)

    def test_grid_argmax_oracle(self, balanced15):
        est = estimate_variance(balanced15, AdjustmentFactor.reml())
        grid = np.linspace(1e-6, 10.0, 4001)
        vals = [oracle_reml_loglik(balanced15.y, balanced15.D, balanced15.X, a) for a in grid]
        a_grid = float(grid[int(np.argmax(vals))])
        assert abs(est.a_hat - a_grid) < 5e-3


class TestAdjustedScore:
    def test_hand_value_balanced(self):
        # A = D = 1, z = 1.959964, m = 15, common mean
        z = 1.959964
        ds = make_dataset(np.zeros(15), np.ones(15), np.ones((15, 1)))
        l1 = log_adjustment_derivative(ds, AdjustmentFactor.yl_gls(0, z), 1.0)
        expected = 2.0 / 2.0 + (1.0 + z * z) / 8.0 + 0.5 * (15.0 / 4.0) * (2.0 / 15.0)
        assert l1 == pytest.approx(expected, rel=1e-12)
        assert l1 == pytest.approx(1.855183, abs=1e-5)
        got = adjusted_score(ds, AdjustmentFactor.yl_gls(0, z), 1.0)
        assert got == pytest.approx(reml_score(ds, 1.0) + expected, rel=1e-10)

    def test_reml_kind_identical(self, unbalanced):
        for a in (0.2, 1.0, 3.0):
            assert adjusted_score(
                unbalanced, AdjustmentFactor.reml(), a
            ) == pytest.approx(reml_score(unbalanced, a), rel=1e-14)

    def test_li_lahiri_adds_reciprocal(self, unbalanced):
        for a in (0.2, 1.0, 3.0):
            got = adjusted_score(unbalanced, AdjustmentFactor.li_lahiri(), a)
            assert got == pytest.approx(reml_score(unbalanced, a) + 1.0 / a, rel=1e-12)

    def test_ols_at_least_gls(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            ds = random_dataset(rng)
            i = int(rng.integers(0, ds.m))
            for a in (0.1, 0.7, 2.0, 8.0):
                gls = log_adjustment_derivative(ds, AdjustmentFactor.yl_gls(i, Z95), a)
                ols = log_adjustment_derivative(ds, AdjustmentFactor.yl_ols(i, Z95), a)
                assert ols >= gls - 1e-12
                assert gls > 0

    def test_singular_at_zero(self, unbalanced):
        for adj in ALL_KINDS[1:]:
            with pytest.raises(SingularAtZero):
                adjusted_score(unbalanced, adj, 0.0)


class TestLogAdjustment:
    def test_reml_identically_zero(self, unbalanced):
        assert log_adjustment(unbalanced, AdjustmentFactor.reml(), 0.5, 7.0) == 0.0

    def test_closed_forms_match_quadrature_oracle(self, unbalanced):
        # dual path: our delta vs scipy quadrature of the derivative
        for adj in ALL_KINDS[1:]:
            val = log_adjustment(unbalanced, adj, 0.1, 10.0)
            ref, _ = quad(
                lambda a: log_adjustment_derivative(unbalanced, adj, a),
                0.1,
                10.0,
                epsabs=1e-12,
                epsrel=1e-12,
            )
            assert val == pytest.approx(ref, abs=1e-8)

    def test_balanced_exponents(self, balanced15):
        # l~(A) - l~(A_ref) = (1+z^2)/4 log(A/Aref)
        #                   + [(7-z^2)/4 + m q_i / 2] log((A+D)/(Aref+D))
        z = Z95
        d = 0.7
        m, qi = 15, 1.0 / 15.0
        for kind in ("yl-gls", "yl-ols"):
            adj = AdjustmentFactor(kind, 3, z)
            for a_ref, a in ((0.5, 2.0), (1.0, 1.0), (3.0, 0.2)):
                got = log_adjustment(balanced15, adj, a_ref, a)
                expected = 0.25 * (1 + z * z) * math.log(a / a_ref) + (
                    0.25 * (7 - z * z) + 0.5 * m * qi
                ) * math.log((a + d) / (a_ref + d))
                assert got == pytest.approx(expected, abs=1e-9)

    def test_derivative_consistency_all_kinds(self, unbalanced):
        # d/dA of log_adjustment matches the closed-form derivative at
        # 20 log-spaced points for every kind
        for adj in ALL_KINDS:
            for a in np.geomspace(0.05, 20.0, 20):
                h = 1e-5 * (1.0 + a)
                fd = (
                    log_adjustment(unbalanced, adj, 1.0, a + h)
                    - log_adjustment(unbalanced, adj, 1.0, a - h)
                ) / (2 * h)
                d = log_adjustment_derivative(unbalanced, adj, a)
                if adj.kind == "reml":
                    assert fd == 0.0 == d
                else:
                    assert fd == pytest.approx(d, rel=1e-6)


class TestEstimateVariance:
    def test_balanced_matches_quadratic_root(self, balanced15):
        z = Z95
        for i in (0, 7):
            root = balanced_quadratic_root(balanced15, i, z)
            for kind in ("yl-gls", "yl-ols"):
                est = estimate_variance(balanced15, AdjustmentFactor(kind, i, z))
                assert est.converged
                assert est.a_hat == pytest.approx(root, abs=1e-8)
                assert abs(est.score_at_solution) < 1e-7

    def test_ordering_re_gls_ols(self):
        rng = np.random.default_rng(99)
        checked = 0
        while checked < 40:
            ds = random_dataset(rng)
            i = 0
            if not uniqueness_condition_holds(ds, i):
                continue
            a_re = estimate_variance(ds, AdjustmentFactor.reml()).a_hat
            a_gls = estimate_variance(ds, AdjustmentFactor.yl_gls(i, Z95)).a_hat
            a_ols = estimate_variance(ds, AdjustmentFactor.yl_ols(i, Z95)).a_hat
            assert a_re <= a_gls + 1e-10
            assert a_gls <= a_ols + 1e-10
            assert a_gls > 0 and a_ols > 0
            checked += 1

    def test_reml_boundary_on_flat_data(self):
        ds = make_dataset(np.full(10, 1.5), np.ones(10), np.ones((10, 1)))
        est = estimate_variance(ds, AdjustmentFactor.reml())
        assert est.a_hat == 0.0
        assert est.at_boundary
        assert est.converged

    def test_reml_consistency_large_m(self):
        rng = np.random.default_rng(1234)
        m = 500
        y = rng.normal(0.0, math.sqrt(2.0), m)
        ds = make_dataset(y, np.ones(m), np.ones((m, 1)))
        est = estimate_variance(ds, AdjustmentFactor.reml())
        assert abs(est.a_hat - 1.0) < 0.15

    def test_warns_when_uniqueness_fails(self):
        ds = make_dataset(
            [0.3, -1.0, 0.5, 1.2, -0.2, 0.9], np.ones(6), np.ones((6, 1))
        )
        assert not uniqueness_condition_holds(ds, 0)
        with pytest.warns(UniquenessConditionWarning):
            estimate_variance(ds, AdjustmentFactor.yl_gls(0, Z95))

    def test_li_lahiri_strictly_positive(self, balanced15):
        est = estimate_variance(balanced15, AdjustmentFactor.li_lahiri())
        assert est.a_hat > 0
        # flat data keeps it positive too
        ds = make_dataset(np.full(10, 1.5), np.ones(10), np.ones((10, 1)))
        est = estimate_variance(ds, AdjustmentFactor.li_lahiri())
        assert est.a_hat > 0


class TestAnova:
    def test_zero_residuals(self):
        ds = make_dataset(np.full(8, 2.0), np.ones(8), np.ones((8, 1)))
        assert anova_estimate(ds) == 0.0

    def test_boundary_hand_case(self):
        # sample variance 1 minus D = 1 truncates to zero
        ds = make_dataset([1.0, 2.0, 3.0], np.ones(3), np.ones((3, 1)))
        assert anova_estimate(ds) == 0.0

    def test_untruncated_hand_case(self):
        ds = make_dataset([0.0, 2.0, 4.0], np.full(3, 0.5), np.ones((3, 1)))
        # sample variance 4, moment estimate 4 - 0.5
        assert anova_estimate(ds) == pytest.approx(3.5, rel=1e-12)

    def test_large_m_near_truth(self):
        rng = np.random.default_rng(55)
        m = 4000
        y = rng.normal(0.0, math.sqrt(2.0), m)
        ds = make_dataset(y, np.ones(m), np.ones((m, 1)))
        assert anova_estimate(ds) == pytest.approx(1.0, abs=0.12)

    def test_prasad_rao_oracle_with_covariates(self, unbalanced):
        x, d, y = unbalanced.X, unbalanced.D, unbalanced.y
        h = x @ np.linalg.inv(x.T @ x) @ x.T
        resid = (np.eye(unbalanced.m) - h) @ y
        val = (resid @ y - np.trace((np.eye(unbalanced.m) - h) @ np.diag(d))) / (
            unbalanced.m - unbalanced.p
        )
        assert anova_estimate(unbalanced) == pytest.approx(max(0.0, val), rel=1e-10)


class TestBalancedQuadratic:
    def test_uniqueness_condition_arithmetic(self, balanced15):
        # p = 1, q = 1/15: (4+1)/(1-1/15) = 5.357... < 15
        assert (4 + 1) / (1 - 1 / 15) == pytest.approx(5.357142857142857)
        assert uniqueness_condition_holds(balanced15, 0)

    def test_root_positive(self, balanced15):
        root = balanced_quadratic_root(balanced15, 0, Z95)
        assert root > 0

    def test_root_solves_quadratic(self, balanced15):
        z = Z95
        root = balanced_quadratic_root(balanced15, 0, z)
        m, p, dd = 15, 1, 0.7
        qi = 1.0 / 15.0
        resid = balanced15.y - balanced15.y.mean()
        s = float(resid @ resid)
        f = (
            (-2 * (m - p) + 8 + 2 * m * qi) * root * root
            + (2 * s - 2 * (m - p) * dd + 8 * dd + (1 + z * z) * dd + 2 * m * dd * qi) * root
            + (1 + z * z) * dd * dd
        )
        assert abs(f) < 1e-7

    def test_not_balanced(self, unbalanced):
        with pytest.raises(NotBalanced):
            balanced_quadratic_root(unbalanced, 0, Z95)

    def test_condition_violated(self):
        ds = make_dataset(
            [0.3, -1.0, 0.5, 1.2, -0.2, 0.9], np.ones(6), np.ones((6, 1))
        )
        with pytest.raises(UniquenessConditionViolated):
            balanced_quadratic_root(ds, 0, Z95)


class TestAdjustmentFactorValidation:
    def test_yl_requires_area_and_z(self):
        with pytest.raises(ValueError):
            AdjustmentFactor("yl-gls")
        with pytest.raises(ValueError):
            AdjustmentFactor("yl-gls", 0, -1.0)

    def test_plain_kinds_reject_area(self):
        with pytest.raises(ValueError):
            AdjustmentFactor("reml", 0)
        with pytest.raises(ValueError):
            AdjustmentFactor("li-lahiri", None, 1.0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            AdjustmentFactor("wang-fuller")

    def test_alpha_to_z(self):
        adj = AdjustmentFactor.yl_gls(0, alpha=0.05)
        assert adj.z == pytest.approx(1.959964, abs=5e-7)
