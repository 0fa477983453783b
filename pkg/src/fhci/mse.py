"""Second-order MSE approximation of the EB estimator and the matching
second-order unbiased plug-in estimator (yl-gls only)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularAtZero
from .model import FayHerriotDataset, _check_area
from .variance import DEFAULT_Z, AdjustmentFactor, VarianceEstimate, log_adjustment_derivative

NEAR_ZERO_FACTOR = 1e-6


@dataclass(frozen=True)
class MseBreakdown:
    g1: float
    g2: float
    g3: float
    total: float
    bias_correction: float
    warnings: tuple[str, ...] = ()


def _g_terms(dataset, i, A, beta_method):
    d = dataset.D
    di = float(d[i])
    v = A + d
    g1 = A * di / (A + di)
    x = dataset.X
    xi = x[i]
    if beta_method == "gls":
        mat = (x.T * (1.0 / v)) @ x
        quad = float(xi @ np.linalg.solve(mat, xi))
    else:
        xtx_inv = np.linalg.inv(x.T @ x)
        u = x @ (xtx_inv @ xi)
        quad = float(np.sum(u * u * v))
    g2 = (di * di / (A + di) ** 2) * quad
    trv2 = float(np.sum(1.0 / (v * v)))
    g3 = (2.0 * di * di / (A + di) ** 3) / trv2
    return g1, g2, g3, trv2


def mse_approx(
    dataset: FayHerriotDataset, i: int, A: float, beta_method: str = "gls"
) -> MseBreakdown:
    """g1 + g2 + g3 approximation; g2 uses the GLS or OLS coefficient
    covariance (the OLS sandwich is never smaller)."""
    _check_area(dataset, i)
    if not A > 0:
        raise SingularAtZero("mse_approx needs A > 0")
    g1, g2, g3, _ = _g_terms(dataset, i, A, beta_method)
    return MseBreakdown(g1, g2, g3, g1 + g2 + g3, 0.0)


def mse_estimate(
    dataset: FayHerriotDataset, i: int, a_hat_gls, z: float = DEFAULT_Z
) -> MseBreakdown:
    """Second-order unbiased estimate g1 + g2 + 2 g3 - B^2 Bias-hat at
    the yl-gls variance estimate.

    Bias-hat = 2 l~'(a_hat) / tr(V^-2). Accepts the estimate either as
    a float or as the VarianceEstimate returned by estimate_variance
    (in which case its z is reused). A near-zero a_hat is flagged, as is
    a negative corrected total; neither is truncated.
    """
    _check_area(dataset, i)
    if isinstance(a_hat_gls, VarianceEstimate):
        if a_hat_gls.adjustment.z is not None:
            z = a_hat_gls.adjustment.z
        a_hat = a_hat_gls.a_hat
    else:
        a_hat = float(a_hat_gls)
    if not a_hat > 0:
        raise SingularAtZero("mse_estimate needs a_hat > 0")
    g1, g2, g3, trv2 = _g_terms(dataset, i, a_hat, "gls")
    adj = AdjustmentFactor("yl-gls", i, z)
    l1 = log_adjustment_derivative(dataset, adj, a_hat)
    bias_hat = 2.0 * l1 / trv2
    di = float(dataset.D[i])
    b_i = di / (a_hat + di)
    correction = b_i * b_i * bias_hat
    total = g1 + g2 + 2.0 * g3 - correction
    flags = []
    if a_hat < NEAR_ZERO_FACTOR * float(np.mean(dataset.D)):
        flags.append("a-hat-near-zero")
    if total < 0.0:
        flags.append("negative-after-correction")
    return MseBreakdown(g1, g2, g3, total, correction, tuple(flags))
