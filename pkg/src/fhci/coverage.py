"""Coverage-error expansion of Cox-type intervals.

The coverage of a Cox-type interval built on an adjusted variance
estimate expands as 1 - alpha + z phi(z) (a_i + b_i)/m up to O(m^-3/2).
The a_i term is a property of the model and the coefficient estimator;
b_i carries the log-adjustment derivative. Matching the yl adjustment
to the coefficient estimator makes a_i + b_i vanish identically, which
is exactly how the yl factors are constructed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import stats
from .errors import SingularAtZero
from .model import FayHerriotDataset, _check_area, fit_regression
from .variance import AdjustmentFactor, log_adjustment_derivative


@dataclass(frozen=True)
class CoverageExpansion:
    a_i: float
    b_i: float
    predicted_coverage: float
    alpha: float
    z: float


def a_term(
    dataset: FayHerriotDataset, i: int, A: float, z: float, beta_method: str = "gls"
) -> float:
    """Always-negative expansion term; depends only on (A, D, X, z)."""
    _check_area(dataset, i)
    if not A > 0:
        raise SingularAtZero("a_term needs A > 0")
    d = dataset.D
    di = float(d[i])
    m = dataset.m
    v = A + d
    trv2 = float(np.sum(1.0 / (v * v)))
    cov = fit_regression(dataset, A, beta_method).cov_beta
    xi = dataset.X[i]
    xvx = float(xi @ cov @ xi)
    bracket = 4.0 * di / (A * (A + di) ** 2) + (1.0 + z * z) * di * di / (
        2.0 * A * A * (A + di) ** 2
    )
    return -(m / trv2) * bracket - (m * di / (A * (A + di))) * xvx


def b_term(
    dataset: FayHerriotDataset, i: int, A: float, z: float, adj: AdjustmentFactor
) -> float:
    """Expansion term contributed by the adjustment: positive for the
    li-lahiri and yl kinds, zero for reml."""
    _check_area(dataset, i)
    if not A > 0:
        raise SingularAtZero("b_term needs A > 0")
    d = dataset.D
    di = float(d[i])
    m = dataset.m
    v = A + d
    trv2 = float(np.sum(1.0 / (v * v)))
    l1 = log_adjustment_derivative(dataset, adj, A)
    return (2.0 * m / trv2) * (di / (A * (A + di))) * l1


def defining_residual(
    dataset: FayHerriotDataset, i: int, A: float, z: float, beta_method: str = "gls"
) -> float:
    """a_i + b_i with the matched yl adjustment; zero up to roundoff."""
    kind = "yl-gls" if beta_method == "gls" else "yl-ols"
    adj = AdjustmentFactor(kind, i, z)
    return a_term(dataset, i, A, z, beta_method) + b_term(dataset, i, A, z, adj)


def expansion(
    dataset: FayHerriotDataset,
    i: int,
    A: float,
    alpha: float,
    adj: AdjustmentFactor,
) -> CoverageExpansion:
    """Predicted coverage 1 - alpha + z phi(z) (a_i + b_i)/m."""
    z = stats.z_value(alpha)
    beta_method = "ols" if adj.kind == "yl-ols" else "gls"
    a = a_term(dataset, i, A, z, beta_method)
    b = b_term(dataset, i, A, z, adj)
    pred = 1.0 - alpha + z * stats.norm_pdf(z) * (a + b) / dataset.m
    return CoverageExpansion(a, b, pred, alpha, z)
