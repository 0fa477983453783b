"""Confidence intervals for small-area means: direct, Cox-type EB and
the parametric-bootstrap EB interval.

Cox-type intervals are centered on the EB point estimate with
half-width z sigma_i(A-hat); since sigma_i(A) < sqrt(D_i) for finite A
they are always strictly shorter than the direct interval, whatever
the variance estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import _backend, stats
from .errors import BootstrapDegenerate, InvalidAlpha
from .model import (
    FayHerriotDataset,
    _check_area,
    eb_estimate,
    fit_regression,
    fit_regression_mixed,
)
from .variance import (
    AdjustmentFactor,
    VarianceEstimate,
    anova_estimate,
    estimate_variance,
    yl_estimates_all_areas,
)

BOOTSTRAP_FAILURE_BUDGET = 0.10

EstimatorSpec = Union[str, AdjustmentFactor, VarianceEstimate]


@dataclass(frozen=True)
class IntervalResult:
    area: str
    lower: float
    upper: float
    half_width: float
    method: str
    level: float
    A_used: float
    n_bootstrap: int = 0

    @property
    def length(self) -> float:
        return self.upper - self.lower


def _check_alpha(alpha: float) -> None:
    if not (isinstance(alpha, (int, float)) and 0.0 < alpha < 1.0):
        raise InvalidAlpha(f"alpha must lie in (0, 1), got {alpha!r}")


def direct_interval(
    y_i: float, D_i: float, alpha: float, area: str = ""
) -> IntervalResult:
    """Exact-coverage interval y_i +/- z sqrt(D_i); the widest option."""
    _check_alpha(alpha)
    if not D_i > 0:
        raise ValueError(f"D must be > 0, got {D_i!r}")
    z = stats.z_value(alpha)
    hw = z * math.sqrt(D_i)
    return IntervalResult(area, y_i - hw, y_i + hw, hw, "direct", 1.0 - alpha, math.inf)


_COX_TAGS = {
    "reml": "cox-reml",
    "li-lahiri": "cox-ll",
    "yl-gls": "cox-yl-gls",
    "yl-ols": "cox-yl-ols",
}


def _resolve_cox(dataset, i, estimator, alpha):
    """Map an estimator spec to (a_hat_i, beta_hat, method_tag).

    The area-specific kinds estimate A for every area and weight the
    coefficients by the mixed profile diag(A_j + D_j) over those
    per-area estimates; the gls/ols distinction lives entirely in the
    adjustment factor. The other kinds share one estimate across areas.
    """
    z = stats.z_value(alpha)
    if isinstance(estimator, str):
        name = estimator
        if name == "anova":
            a_hat = anova_estimate(dataset)
            return a_hat, fit_regression(dataset, a_hat, "gls").beta_hat, "cox-anova"
        if name in ("reml", "li-lahiri"):
            estimator = AdjustmentFactor(name)
        elif name in ("yl-gls", "yl-ols"):
            estimator = AdjustmentFactor(name, i, z)
        else:
            raise ValueError(f"unknown estimator {estimator!r}")
    given = None
    if isinstance(estimator, VarianceEstimate):
        given = estimator
        estimator = estimator.adjustment
    if not isinstance(estimator, AdjustmentFactor):
        raise TypeError(f"unsupported estimator spec: {estimator!r}")
    kind = estimator.kind
    tag = _COX_TAGS[kind]
    if kind in ("reml", "li-lahiri"):
        a_hat = (given or estimate_variance(dataset, estimator)).a_hat
        return a_hat, fit_regression(dataset, a_hat, "gls").beta_hat, tag
    if estimator.area != i:
        raise ValueError(f"estimator targets area {estimator.area}, interval area {i}")
    zz = estimator.z
    a_by_area = np.empty(dataset.m)
    for j in range(dataset.m):
        if given is not None and j == i:
            a_by_area[j] = given.a_hat
        else:
            a_by_area[j] = estimate_variance(
                dataset, AdjustmentFactor(kind, j, zz)
            ).a_hat
    beta = fit_regression_mixed(dataset, a_by_area).beta_hat
    return float(a_by_area[i]), beta, tag


def cox_interval(
    dataset: FayHerriotDataset, i: int, estimator: EstimatorSpec, alpha: float
) -> IntervalResult:
    """EB interval theta_eb(A-hat) +/- z sigma_i(A-hat).

    A REML estimate at the boundary collapses the interval onto the
    synthetic value (zero width).
    """
    _check_alpha(alpha)
    _check_area(dataset, i)
    a_hat, beta_hat, tag = _resolve_cox(dataset, i, estimator, alpha)
    est = eb_estimate(dataset, i, a_hat, beta_hat)
    z = stats.z_value(alpha)
    hw = z * est.sigma
    return IntervalResult(
        dataset.area_ids[i], est.theta_eb - hw, est.theta_eb + hw, hw,
        tag, 1.0 - alpha, a_hat,
    )


def cox_intervals_all_areas(
    dataset: FayHerriotDataset, estimator_name: str, alpha: float
) -> list[IntervalResult]:
    """Cox-type intervals for every area, sharing the estimation work.

    For the area-specific kinds the per-area estimates (and the mixed
    weight profile behind the coefficients) are computed once instead
    of once per interval.
    """
    _check_alpha(alpha)
    z = stats.z_value(alpha)
    if estimator_name not in ("yl-gls", "yl-ols"):
        return [
            cox_interval(dataset, i, estimator_name, alpha)
            for i in range(dataset.m)
        ]
    ests = yl_estimates_all_areas(dataset, estimator_name, z)
    a_by_area = np.array([e.a_hat for e in ests])
    beta = fit_regression_mixed(dataset, a_by_area).beta_hat
    tag = _COX_TAGS[estimator_name]
    out = []
    for i in range(dataset.m):
        est = eb_estimate(dataset, i, float(a_by_area[i]), beta)
        hw = z * est.sigma
        out.append(
            IntervalResult(
                dataset.area_ids[i], est.theta_eb - hw, est.theta_eb + hw, hw,
                tag, 1.0 - alpha, float(a_by_area[i]),
            )
        )
    return out


def bootstrap_interval(
    dataset: FayHerriotDataset,
    i: int,
    B: int,
    estimator: EstimatorSpec = None,
    alpha: float = 0.05,
    seed: int = 0,
) -> IntervalResult:
    """Parametric-bootstrap EB interval.

    Replicates are drawn from the fitted model (theta* ~ N(x'beta-hat,
    A-hat), y* ~ N(theta*, D)); each is fully re-estimated and the
    pivot (theta*_i - theta*_eb)/sigma_i(A*) collected. The interval
    offsets the EB estimate by the empirical pivot quantiles times
    sigma_i(A-hat). Failed replicates are redrawn up to a 10% budget,
    then the whole construction errors out.
    """
    _check_alpha(alpha)
    _check_area(dataset, i)
    if B < 100:
        raise ValueError(f"B must be >= 100, got {B}")
    z = stats.z_value(alpha)
    if estimator is None:
        estimator = AdjustmentFactor.li_lahiri()
    if isinstance(estimator, str):
        if estimator in ("yl-gls", "yl-ols"):
            estimator = AdjustmentFactor(estimator, i, z)
        else:
            estimator = AdjustmentFactor(estimator)
    if not isinstance(estimator, AdjustmentFactor):
        raise TypeError("bootstrap_interval needs an AdjustmentFactor spec")
    fitted = estimate_variance(dataset, estimator)
    a_hat = fitted.a_hat
    # center and pivots share one construction: coefficients weighted at
    # the fitted variance, whatever adjustment produced it
    fit = fit_regression(dataset, a_hat, "gls")
    est = eb_estimate(dataset, i, a_hat, fit.beta_hat)
    xb_hat = dataset.X @ fit.beta_hat
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    mod = _backend.backend()
    ctx = _backend.context_for(dataset)
    kind = _backend.KIND_CODES[estimator.kind]
    areas = np.array([i], dtype=np.int64)
    budget = int(math.ceil(BOOTSTRAP_FAILURE_BUDGET * B))
    pivots: list[float] = []
    want = B
    spent = 0
    while want > 0:
        nrm = stats.standard_normals(rng, (want, 2 * dataset.m))
        piv, ok = mod.bootstrap_pivots(ctx, kind, areas, z, xb_hat, a_hat, nrm)
        good = np.flatnonzero(ok)
        pivots.extend(float(piv[b, 0]) for b in good)
        failed = want - good.size
        spent += failed
        if failed == 0:
            break
        if spent > budget:
            raise BootstrapDegenerate(
                f"{spent} bootstrap replicates failed (budget {budget} of B={B})"
            )
        want = failed
    ordered = np.sort(np.asarray(pivots[:B]))
    q_lo = stats.hazen_quantile(ordered, 0.5 * alpha)
    q_hi = stats.hazen_quantile(ordered, 1.0 - 0.5 * alpha)
    lower = est.theta_eb + q_lo * est.sigma
    upper = est.theta_eb + q_hi * est.sigma
    return IntervalResult(
        dataset.area_ids[i], lower, upper, 0.5 * (upper - lower),
        "cll-bootstrap", 1.0 - alpha, a_hat, B,
    )
