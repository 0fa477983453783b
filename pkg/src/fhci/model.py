"""Fay-Herriot dataset container and point-estimation building blocks.

The model has two levels: direct estimates y_i ~ N(theta_i, D_i) with
known sampling variances D_i, and area means theta_i ~ N(x_i'beta, A).
Everything downstream (variance estimation, intervals, MSE) consumes
the immutable :class:`FayHerriotDataset` defined here.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    CsvFormatError,
    IndexOutOfRange,
    NonPositiveSamplingVariance,
    RankDeficientDesign,
    SingularNormalEquations,
    TooFewAreas,
)

RCOND_MIN = 1e-12
LEVERAGE_SUM_TOL = 1e-8


@dataclass(frozen=True)
class FayHerriotDataset:
    """Immutable area-level dataset: ids, y, D and the m x p design X."""

    area_ids: tuple[str, ...]
    y: np.ndarray
    D: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        d = np.ascontiguousarray(self.D, dtype=np.float64)
        x = np.ascontiguousarray(self.X, dtype=np.float64)
        if x.ndim != 2:
            raise RankDeficientDesign("X must be a 2-d matrix")
        m, p = x.shape
        if y.shape != (m,) or d.shape != (m,):
            raise CsvFormatError("y, D and X row counts disagree")
        ids = tuple(str(a) for a in self.area_ids) or tuple(
            str(i + 1) for i in range(m)
        )
        if len(ids) != m:
            raise CsvFormatError("area id count does not match data rows")
        if p < 1 or m <= p:
            raise TooFewAreas(f"need m > p >= 1, got m={m}, p={p}")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(d)) or not np.all(
            np.isfinite(x)
        ):
            raise CsvFormatError("non-finite values in dataset")
        bad = np.flatnonzero(d <= 0.0)
        if bad.size:
            i = int(bad[0])
            raise NonPositiveSamplingVariance(ids[i], i + 1)
        if np.linalg.matrix_rank(x) < p:
            raise RankDeficientDesign(f"design matrix has rank < p={p}")
        for a in (y, d, x):
            a.setflags(write=False)
        object.__setattr__(self, "area_ids", ids)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "D", d)
        object.__setattr__(self, "X", x)
        q = self.leverages
        if abs(float(q.sum()) - p) > LEVERAGE_SUM_TOL:
            raise RankDeficientDesign("leverages do not sum to p")
        if np.any(q <= 0.0) or np.any(q >= 1.0):
            raise RankDeficientDesign(
                "degenerate design: every leverage must lie strictly in (0, 1)"
            )

    @property
    def m(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @cached_property
    def leverages(self) -> np.ndarray:
        """Level-2 leverages q_i = x_i'(X'X)^-1 x_i."""
        xtx_inv = np.linalg.inv(self.X.T @ self.X)
        q = np.einsum("ij,jk,ik->i", self.X, xtx_inv, self.X)
        q.setflags(write=False)
        return q

    def with_y(self, y: np.ndarray) -> "FayHerriotDataset":
        """Same design and variances, new direct estimates."""
        return FayHerriotDataset(self.area_ids, np.asarray(y, float), self.D, self.X)


@dataclass(frozen=True)
class VarianceProfile:
    """Marginal variance diagonal A + D_i with cached traces tr(V^-k)."""

    A: float
    V_diag: tuple[float, ...]
    trV_inv: tuple[float, float, float, float, float]

    @classmethod
    def from_data(cls, A: float, D: Sequence[float]) -> "VarianceProfile":
        if A < 0:
            raise ValueError("A must be >= 0")
        v = tuple(float(A) + float(x) for x in D)
        w = np.reciprocal(np.asarray(v))
        traces = tuple(float(np.sum(w ** k)) for k in range(1, 6))
        return cls(float(A), v, traces)

    def trace(self, k: int) -> float:
        if not 1 <= k <= 5:
            raise ValueError("cached traces cover k = 1..5")
        return self.trV_inv[k - 1]


@dataclass(frozen=True)
class RegressionFit:
    beta_hat: np.ndarray
    method: str  # "gls" or "ols"
    cov_beta: np.ndarray


@dataclass(frozen=True)
class EbPointEstimate:
    theta_eb: float
    shrinkage: float  # B_i = D_i / (A + D_i)
    sigma: float  # sqrt(A D_i / (A + D_i))


def load_dataset(rows: Iterable[Mapping[str, object]]) -> FayHerriotDataset:
    """Build a dataset from records with keys area, y, D, x1..xp."""
    rows = list(rows)
    if not rows:
        raise CsvFormatError("no data rows")
    first = rows[0]
    xcols = []
    j = 1
    while f"x{j}" in first:
        xcols.append(f"x{j}")
        j += 1
    required = ["area", "y", "D", *xcols]
    if not xcols:
        raise CsvFormatError("no covariate columns x1..xp found")
    ids = []
    y = []
    d = []
    x = []
    for r, rec in enumerate(rows, start=1):
        for col in required:
            if col not in rec or rec[col] is None or rec[col] == "":
                raise CsvFormatError(f"row {r}: missing field {col!r}")
        ids.append(str(rec["area"]))
        try:
            y.append(float(rec["y"]))  # type: ignore[arg-type]
            d.append(float(rec["D"]))  # type: ignore[arg-type]
            x.append([float(rec[c]) for c in xcols])  # type: ignore[arg-type]
        except (TypeError, ValueError) as exc:
            raise CsvFormatError(f"row {r}: non-numeric value ({exc})") from None
        if d[-1] <= 0.0:
            raise NonPositiveSamplingVariance(ids[-1], r)
    return FayHerriotDataset(tuple(ids), np.array(y), np.array(d), np.array(x))


def load_csv(source) -> FayHerriotDataset:
    """Read the canonical CSV format: header area,y,D,x1,...,xp."""
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return load_csv(fh)
    if isinstance(source, (bytes, bytearray)):
        return load_csv(io.StringIO(source.decode("utf-8")))
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise CsvFormatError("empty input") from None
    header = [h.strip() for h in header]
    if header[:3] != ["area", "y", "D"]:
        raise CsvFormatError("header must start with area,y,D")
    for j, name in enumerate(header[3:], start=1):
        if name != f"x{j}":
            raise CsvFormatError(f"covariate columns must be x1..xp, got {name!r}")
    if len(header) < 4:
        raise CsvFormatError("at least one covariate column x1 is required")
    rows = []
    for r, rec in enumerate(reader, start=1):
        if not rec or (len(rec) == 1 and not rec[0].strip()):
            continue  # blank line
        if len(rec) != len(header):
            raise CsvFormatError(
                f"row {r}: expected {len(header)} fields, got {len(rec)}"
            )
        rows.append(dict(zip(header, rec)))
    return load_dataset(rows)


def leverage(dataset: FayHerriotDataset, i: int) -> float:
    """Leverage of area i (0-based) in the level-2 design."""
    _check_area(dataset, i)
    return float(dataset.leverages[i])


def _check_area(dataset: FayHerriotDataset, i: int) -> None:
    if not 0 <= i < dataset.m:
        raise IndexOutOfRange(f"area index {i} outside 0..{dataset.m - 1}")


def fit_regression(
    dataset: FayHerriotDataset, A: float, method: str = "gls"
) -> RegressionFit:
    """Weighted (GLS) or ordinary least squares at model variance A.

    GLS: beta = (X'V^-1X)^-1 X'V^-1 y with cov (X'V^-1X)^-1.
    OLS: beta = (X'X)^-1 X'y with cov (X'X)^-1 X'VX (X'X)^-1; the
    coefficients do not depend on A, the covariance does.
    """
    if not math.isfinite(A) or A < 0:
        raise ValueError("A must be finite and >= 0")
    if method not in ("gls", "ols"):
        raise ValueError(f"method must be 'gls' or 'ols', got {method!r}")
    x = dataset.X
    v = A + dataset.D
    if method == "gls":
        return _weighted_fit(x, dataset.y, 1.0 / v)
    mat = x.T @ x
    lower = _checked_cholesky(mat)
    beta = _chol_solve(lower, x.T @ dataset.y)
    mat_inv = _chol_inverse(lower)
    cov = mat_inv @ ((x.T * v) @ x) @ mat_inv
    beta.setflags(write=False)
    cov.setflags(write=False)
    return RegressionFit(beta, "ols", cov)


def fit_regression_mixed(
    dataset: FayHerriotDataset, A_by_area: Sequence[float]
) -> RegressionFit:
    """GLS with an area-specific variance profile diag(A_i + D_i).

    Used with area-specific adjusted variance estimates, where each
    area contributes its own estimate to the weight matrix.
    """
    a = np.asarray(A_by_area, dtype=np.float64)
    if a.shape != (dataset.m,):
        raise ValueError(f"expected {dataset.m} per-area values, got shape {a.shape}")
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        raise ValueError("per-area variances must be finite and >= 0")
    return _weighted_fit(dataset.X, dataset.y, 1.0 / (a + dataset.D))


def _checked_cholesky(mat: np.ndarray) -> np.ndarray:
    cond = np.linalg.cond(mat)
    if not np.isfinite(cond) or 1.0 / cond < RCOND_MIN:
        raise SingularNormalEquations(
            f"normal equations nearly singular (rcond < {RCOND_MIN:g})"
        )
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise SingularNormalEquations(str(exc)) from None


def _weighted_fit(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> RegressionFit:
    mat = (x.T * w) @ x
    lower = _checked_cholesky(mat)
    beta = _chol_solve(lower, x.T @ (w * y))
    cov = _chol_inverse(lower)
    beta.setflags(write=False)
    cov.setflags(write=False)
    return RegressionFit(beta, "gls", cov)


def _chol_solve(lower: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    return np.linalg.solve(lower.T, np.linalg.solve(lower, rhs))


def _chol_inverse(lower: np.ndarray) -> np.ndarray:
    linv = np.linalg.inv(lower)
    return linv.T @ linv


def shrinkage(dataset: FayHerriotDataset, i: int, A: float) -> float:
    _check_area(dataset, i)
    return float(dataset.D[i] / (A + dataset.D[i]))


def posterior_sd(dataset: FayHerriotDataset, i: int, A: float) -> float:
    """sigma_i(A) = sqrt(A D_i / (A + D_i)), strictly below sqrt(D_i)."""
    _check_area(dataset, i)
    di = float(dataset.D[i])
    return math.sqrt(A * di / (A + di))


def eb_estimate(
    dataset: FayHerriotDataset, i: int, A: float, beta_hat: np.ndarray
) -> EbPointEstimate:
    """Empirical Bayes point estimate for area i at variance A.

    theta_eb = (1 - B_i) y_i + B_i x_i'beta, which lies between the
    direct estimate and the regression synthetic value.
    """
    _check_area(dataset, i)
    if not math.isfinite(A) or A < 0:
        raise ValueError("A must be finite and >= 0")
    di = float(dataset.D[i])
    b = di / (A + di)
    synth = float(dataset.X[i] @ np.asarray(beta_hat, dtype=np.float64))
    theta = (1.0 - b) * float(dataset.y[i]) + b * synth
    return EbPointEstimate(theta, b, math.sqrt(A * di / (A + di)))
