"""Model-variance estimation: residual likelihood, adjustment factors
and the global 1-D maximization over A.

Four adjustment kinds are supported. "reml" leaves the residual
likelihood untouched. "li-lahiri" multiplies it by A. The "yl-gls" and
"yl-ols" kinds are area- and confidence-level-specific factors whose
log-derivative has the closed form

    2/(A+D_i) + (1+z^2) D_i / (4A(A+D_i)) + tr(V^-2) x_i' Var(beta~) x_i / 2

with Var(beta~) the GLS or OLS coefficient covariance; they exist to
cancel the leading coverage-error term of the Cox-type interval while
keeping the estimate strictly positive.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _backend, stats
from .errors import (
    NotBalanced,
    OptimizerDidNotConverge,
    QuadratureFailure,
    SingularAtZero,
    UniquenessConditionViolated,
    UniquenessConditionWarning,
)
from .model import FayHerriotDataset, _check_area

KINDS = ("reml", "li-lahiri", "yl-gls", "yl-ols")
DEFAULT_Z = 1.959963984540054  # two-sided 95% critical value


@dataclass(frozen=True)
class AdjustmentFactor:
    """Named adjusted-likelihood specification.

    kind: one of "reml", "li-lahiri", "yl-gls", "yl-ols".
    area: target area index, required for the yl kinds.
    z: normal critical value entering the yl factors.
    """

    kind: str
    area: Optional[int] = None
    z: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown adjustment kind {self.kind!r}")
        if self.kind in ("yl-gls", "yl-ols"):
            if self.area is None:
                raise ValueError(f"kind {self.kind!r} requires a target area")
            if self.z is None or not self.z > 0:
                raise ValueError(f"kind {self.kind!r} requires z > 0")
        elif self.area is not None or self.z is not None:
            raise ValueError(f"kind {self.kind!r} takes neither area nor z")

    @classmethod
    def reml(cls) -> "AdjustmentFactor":
        return cls("reml")

    @classmethod
    def li_lahiri(cls) -> "AdjustmentFactor":
        return cls("li-lahiri")

    @classmethod
    def yl_gls(cls, area: int, z: float = None, alpha: float = None) -> "AdjustmentFactor":
        return cls("yl-gls", area, _resolve_z(z, alpha))

    @classmethod
    def yl_ols(cls, area: int, z: float = None, alpha: float = None) -> "AdjustmentFactor":
        return cls("yl-ols", area, _resolve_z(z, alpha))

    @property
    def is_area_specific(self) -> bool:
        return self.kind in ("yl-gls", "yl-ols")


def _resolve_z(z, alpha):
    if z is not None:
        return float(z)
    if alpha is not None:
        return stats.z_value(alpha)
    return DEFAULT_Z


@dataclass(frozen=True)
class VarianceEstimate:
    a_hat: float
    adjustment: AdjustmentFactor
    converged: bool
    score_at_solution: float
    n_local_maxima_found: int
    at_boundary: bool


def _kernel_args(dataset, adj):
    _backend_mod = _backend.backend()
    ctx = _backend.context_for(dataset)
    kind = _backend.KIND_CODES[adj.kind]
    area = adj.area if adj.area is not None else -1
    if area >= 0:
        _check_area(dataset, area)
    z = adj.z if adj.z is not None else 0.0
    return _backend_mod, ctx, kind, area, z


def uniqueness_condition_holds(dataset: FayHerriotDataset, i: int) -> bool:
    """m > (4 + p) / (1 - q_i), the strict-positivity/uniqueness bound."""
    _check_area(dataset, i)
    q = float(dataset.leverages[i])
    return dataset.m > (4.0 + dataset.p) / (1.0 - q)


def reml_log_likelihood(dataset: FayHerriotDataset, A: float) -> float:
    """Residual log-likelihood l_RE(A), computed without m x m matrices."""
    if not A >= 0:
        raise ValueError("A must be >= 0")
    mod, ctx, _, _, _ = _kernel_args(dataset, AdjustmentFactor.reml())
    return float(mod.reml_loglik(ctx, dataset.y, A))


def reml_score(dataset: FayHerriotDataset, A: float) -> float:
    """d l_RE / dA = (y'P^2y - tr P) / 2; one-sided at A = 0."""
    if not A >= 0:
        raise ValueError("A must be >= 0")
    mod, ctx, kind, area, z = _kernel_args(dataset, AdjustmentFactor.reml())
    return float(mod.adjusted_score(ctx, dataset.y, kind, area, z, A))


def adjusted_score(dataset: FayHerriotDataset, adj: AdjustmentFactor, A: float) -> float:
    """reml_score(A) plus the log-adjustment derivative of the given kind."""
    if adj.kind != "reml" and not A > 0:
        raise SingularAtZero(f"adjustment {adj.kind!r} is singular at A = 0")
    if adj.kind == "reml" and not A >= 0:
        raise ValueError("A must be >= 0")
    mod, ctx, kind, area, z = _kernel_args(dataset, adj)
    return float(mod.adjusted_score(ctx, dataset.y, kind, area, z, A))


def log_adjustment(
    dataset: FayHerriotDataset, adj: AdjustmentFactor, A_ref: float, A: float
) -> float:
    """Log adjustment relative to a reference point, l~(A) - l~(A_ref).

    Closed forms everywhere except the yl-gls kind, whose slope term is
    integrated by adaptive quadrature to 1e-10.
    """
    if adj.kind != "reml" and (not A > 0 or not A_ref > 0):
        raise SingularAtZero("log adjustment needs A, A_ref > 0")
    mod, ctx, kind, area, z = _kernel_args(dataset, adj)
    val, ok = mod.log_adjustment_delta(ctx, kind, area, z, A_ref, A)
    if not ok:
        raise QuadratureFailure("adaptive quadrature did not reach 1e-10")
    return float(val)


def log_adjustment_derivative(
    dataset: FayHerriotDataset, adj: AdjustmentFactor, A: float
) -> float:
    """Closed-form derivative of the log adjustment at A > 0."""
    if adj.kind == "reml":
        return 0.0
    if not A > 0:
        raise SingularAtZero(f"adjustment {adj.kind!r} is singular at A = 0")
    if adj.kind == "li-lahiri":
        return 1.0 / A
    i = adj.area
    _check_area(dataset, i)
    z = adj.z
    d = dataset.D
    di = float(d[i])
    v = A + d
    trv2 = float(np.sum(1.0 / (v * v)))
    x = dataset.X
    xi = x[i]
    if adj.kind == "yl-gls":
        mat = (x.T * (1.0 / v)) @ x
        quad = float(xi @ np.linalg.solve(mat, xi))
    else:
        xtx_inv = np.linalg.inv(x.T @ x)
        u = x @ (xtx_inv @ xi)
        quad = float(np.sum(u * u * v))
    return 2.0 / (A + di) + (1.0 + z * z) * di / (4.0 * A * (A + di)) + 0.5 * trv2 * quad


def anova_estimate(dataset: FayHerriotDataset) -> float:
    """Truncated moment estimate max{0, [y'(I-H)y - tr((I-H)D)]/(m-p)}."""
    mod, ctx, _, _, _ = _kernel_args(dataset, AdjustmentFactor.reml())
    return float(mod.anova_estimate(ctx, dataset.y))


def estimate_variance(
    dataset: FayHerriotDataset, adj: AdjustmentFactor
) -> VarianceEstimate:
    """Global maximizer of the adjusted residual likelihood over [0, inf).

    The REML kind may sit at the boundary (a_hat = 0 with the boundary
    flag, not an error). For the yl kinds the estimate is strictly
    positive whenever m > (4+p)/(1-q_i); when that bound fails a
    UniquenessConditionWarning is emitted and the numeric argmax is
    returned as-is.
    """
    mod, ctx, kind, area, z = _kernel_args(dataset, adj)
    condition_ok = True
    if adj.is_area_specific:
        condition_ok = uniqueness_condition_holds(dataset, adj.area)
        if not condition_ok:
            warnings.warn(
                f"m={dataset.m} <= (4+p)/(1-q_i) for area {adj.area}: the "
                "adjusted-likelihood maximum may not be unique",
                UniquenessConditionWarning,
                stacklevel=2,
            )
    a_hat, score, n_max, at_boundary, converged = mod.fit_variance(
        ctx, dataset.y, kind, area, z
    )
    if not converged and condition_ok:
        raise OptimizerDidNotConverge(
            f"no usable maximum located for kind {adj.kind!r} (last A={a_hat:g})"
        )
    return VarianceEstimate(
        float(a_hat), adj, bool(converged), float(score), int(n_max), bool(at_boundary)
    )


def yl_estimates_all_areas(
    dataset: FayHerriotDataset, kind: str, z: float
) -> list[VarianceEstimate]:
    """Area-specific adjusted estimates for every area.

    Needed to assemble the mixed variance profile diag(A_i + D_i) that
    weights the GLS coefficients behind the EB centers.
    """
    if kind not in ("yl-gls", "yl-ols"):
        raise ValueError(f"kind must be area-specific, got {kind!r}")
    return [
        estimate_variance(dataset, AdjustmentFactor(kind, i, z))
        for i in range(dataset.m)
    ]


def balanced_quadratic_root(dataset: FayHerriotDataset, i: int, z: float) -> float:
    """Closed-form yl estimate in the balanced case D_i = D.

    The estimating equation reduces to a concave quadratic
    f(A) = {-2(m-p)+8+2mq_i} A^2
         + {2 y'(I-H)y - 2(m-p)D + 8D + (1+z^2)D + 2mDq_i} A
         + (1+z^2)D^2
    with f(0) > 0, so it has exactly one positive root when
    m > (4+p)/(1-q_i).
    """
    _check_area(dataset, i)
    d = dataset.D
    dmax = float(d.max())
    dmin = float(d.min())
    if dmax - dmin > 1e-12 * max(dmax, 1.0):
        raise NotBalanced("sampling variances differ across areas")
    if not uniqueness_condition_holds(dataset, i):
        raise UniquenessConditionViolated(
            f"m={dataset.m} <= (4+p)/(1-q_i) for area {i}"
        )
    dd = dmax
    m = dataset.m
    p = dataset.p
    qi = float(dataset.leverages[i])
    x = dataset.X
    xtx_inv = np.linalg.inv(x.T @ x)
    resid = dataset.y - x @ (xtx_inv @ (x.T @ dataset.y))
    s = float(resid @ resid)
    a2 = -2.0 * (m - p) + 8.0 + 2.0 * m * qi
    a1 = 2.0 * s - 2.0 * (m - p) * dd + 8.0 * dd + (1.0 + z * z) * dd + 2.0 * m * dd * qi
    a0 = (1.0 + z * z) * dd * dd
    # a2 < 0 and a0 > 0: exactly one positive root; stable quadratic formula
    disc = a1 * a1 - 4.0 * a2 * a0
    sq = math.sqrt(disc)
    if a1 >= 0.0:
        qq = -0.5 * (a1 + sq)
    else:
        qq = -0.5 * (a1 - sq)
    r1 = qq / a2
    r2 = a0 / qq
    return r1 if r1 > 0.0 else r2
