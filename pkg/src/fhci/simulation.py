"""Seeded Monte Carlo engine for coverage and length comparisons.

Two design families are built in: five-group sampling-variance patterns
over m = 15 areas with a common mean, and single-covariate designs that
pin the first area's leverage and sampling variance while the other 14
areas share a small variance and a common leverage.

Determinism: replicate r draws its variates from a Philox stream keyed
by (seed, r) (bootstrap draws from (seed, r, 1)), per-replicate results
land in an array slot indexed by r, and the final reduction runs in
replicate order - so any worker count produces byte-identical reports.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _backend, stats
from .errors import SimulationFailure, UnknownPattern
from .model import FayHerriotDataset

ALL_METHODS = (
    "direct",
    "cox-reml",
    "cox-anova",
    "cox-ll",
    "cox-yl-gls",
    "cox-yl-ols",
    "cll-bootstrap",
)

TABLE_LABELS = {
    "direct": "Direct",
    "cox-reml": "Cox.RE",
    "cox-anova": "Cox.ANOVA",
    "cox-ll": "Cox.LL",
    "cox-yl-gls": "Cox.YL.GLS",
    "cox-yl-ols": "Cox.YL.OLS",
    "cll-bootstrap": "CLL.LL",
}

PATTERN_D = {
    "a": (0.7, 0.6, 0.5, 0.4, 0.3),
    "b": (4.0, 0.6, 0.5, 0.4, 0.1),
}

MAX_FAILURE_SHARE = 0.01
BOOTSTRAP_FAILURE_BUDGET = 0.10


@dataclass(frozen=True)
class SimulationDesign:
    name: str
    X: np.ndarray
    D: np.ndarray
    true_A: float
    groups: tuple[tuple[int, ...], ...]
    group_labels: tuple[str, ...]
    alpha: float = 0.05
    R: int = 2000
    B: int = 500
    seed: int = 1
    methods: tuple[str, ...] = ALL_METHODS

    def __post_init__(self):
        x = np.ascontiguousarray(self.X, dtype=np.float64)
        d = np.ascontiguousarray(self.D, dtype=np.float64)
        x.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "X", x)
        object.__setattr__(self, "D", d)
        unknown = [t for t in self.methods if t not in ALL_METHODS]
        if unknown:
            raise UnknownPattern(f"unknown methods: {unknown}")
        if self.R < 1 or self.B < 1:
            raise ValueError("R and B must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def report_areas(self) -> tuple[int, ...]:
        return tuple(i for g in self.groups for i in g)


def pattern_design(
    pattern: str,
    R: int = 2000,
    B: int = 500,
    seed: int = 1,
    alpha: float = 0.05,
    methods: Sequence[str] = ALL_METHODS,
) -> SimulationDesign:
    """Common-mean design: five groups of three areas, equal D within a
    group, pattern 'a' = (0.7, 0.6, 0.5, 0.4, 0.3), 'b' = (4.0, 0.6,
    0.5, 0.4, 0.1), true A = 1."""
    if pattern not in PATTERN_D:
        raise UnknownPattern(f"unknown pattern {pattern!r}")
    vals = PATTERN_D[pattern]
    d = np.repeat(np.asarray(vals, dtype=np.float64), 3)
    x = np.ones((15, 1))
    groups = tuple(tuple(range(3 * g, 3 * g + 3)) for g in range(5))
    labels = tuple(str(g + 1) for g in range(5))
    return SimulationDesign(
        f"pattern-{pattern}", x, d, 1.0, groups, labels,
        alpha=alpha, R=R, B=B, seed=seed, methods=tuple(methods),
    )


def leverage_design(
    q1: float,
    D1: float,
    R: int = 2000,
    B: int = 500,
    seed: int = 1,
    alpha: float = 0.05,
    methods: Sequence[str] = ALL_METHODS,
) -> SimulationDesign:
    """Single-covariate design over m = 15 areas.

    The first area gets leverage q1 and sampling variance D1; the rest
    share D = 0.01 and a common leverage (1 - q1)/14. A two-point
    covariate achieves this: x_1 = 1 and x_j = sqrt((1 - q1)/(14 q1)).
    Only the first area is reported.
    """
    if not 0.0 < q1 < 1.0:
        raise UnknownPattern(f"leverage must lie in (0, 1), got {q1}")
    if not D1 > 0.0:
        raise UnknownPattern(f"sampling variance must be > 0, got {D1}")
    xrest = math.sqrt((1.0 - q1) / (14.0 * q1))
    x = np.full((15, 1), xrest)
    x[0, 0] = 1.0
    d = np.full(15, 0.01)
    d[0] = D1
    return SimulationDesign(
        f"lev-{q1:g}-{D1:g}", x, d, 1.0, ((0,),), ("1",),
        alpha=alpha, R=R, B=B, seed=seed, methods=tuple(methods),
    )


def design_from_pattern(token: str, **kwargs) -> SimulationDesign:
    """Parse a pattern token: 'a', 'b' or 'lev-<q1>-<D1>'."""
    if token in PATTERN_D:
        return pattern_design(token, **kwargs)
    if token.startswith("lev-"):
        parts = token.split("-")
        if len(parts) == 3:
            try:
                return leverage_design(float(parts[1]), float(parts[2]), **kwargs)
            except ValueError:
                pass
    raise UnknownPattern(f"unknown design pattern {token!r}")


@dataclass(frozen=True)
class SimulationReport:
    design_name: str
    alpha: float
    R: int
    B: int
    seed: int
    methods: tuple[str, ...]
    group_labels: tuple[str, ...]
    coverage: np.ndarray  # percent, groups x methods
    mc_se: np.ndarray  # percent, groups x methods
    avg_length: np.ndarray  # groups x methods
    failed_replicates: dict[str, int] = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = ["group,method,coverage,mc_se,avg_length"]
        for gi, label in enumerate(self.group_labels):
            for mi, method in enumerate(self.methods):
                lines.append(
                    f"{label},{method},{self.coverage[gi, mi]:.6g},"
                    f"{self.mc_se[gi, mi]:.6g},{self.avg_length[gi, mi]:.6g}"
                )
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        """Aligned coverage (length) table, one row per group."""
        header = (
            f"{self.design_name}: alpha={self.alpha:g} R={self.R} "
            f"B={self.B} seed={self.seed}"
        )
        cols = [TABLE_LABELS[m] for m in self.methods]
        cells = [
            [
                f"{self.coverage[gi, mi]:.1f} ({self.avg_length[gi, mi]:.1f})"
                for mi in range(len(self.methods))
            ]
            for gi in range(len(self.group_labels))
        ]
        widths = [
            max(len(cols[mi]), max(len(row[mi]) for row in cells))
            for mi in range(len(cols))
        ]
        glab = max(len("G"), max(len(g) for g in self.group_labels))
        out = [header]
        out.append(
            "  ".join(["G".ljust(glab)] + [c.ljust(w) for c, w in zip(cols, widths)])
        )
        for gi, label in enumerate(self.group_labels):
            out.append(
                "  ".join(
                    [label.ljust(glab)]
                    + [cells[gi][mi].ljust(widths[mi]) for mi in range(len(cols))]
                )
            )
        if any(self.failed_replicates.values()):
            out.append(f"failed replicates: {self.failed_replicates}")
        return "\n".join(out) + "\n"


def replicate_rng(seed: int, rep: int, stream: int = 0) -> np.random.Generator:
    """Philox stream keyed by (seed, replicate[, stream])."""
    key = (rep,) if stream == 0 else (rep, stream)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def generate_replicate(design: SimulationDesign, rng: np.random.Generator):
    """One synthetic dataset plus the latent area means.

    y_i = x_i'beta + v_i + e_i with v ~ N(0, A), e ~ N(0, D_i); the true
    beta is zero, matching the common-mean setup that the estimators
    re-fit from data.
    """
    m = design.m
    nrm = stats.standard_normals(rng, 2 * m)
    v = math.sqrt(design.true_A) * nrm[:m]
    e = np.sqrt(design.D) * nrm[m:]
    theta = v
    y = theta + e
    dataset = FayHerriotDataset(
        tuple(str(i + 1) for i in range(m)), y, design.D, design.X
    )
    return dataset, theta


def _gls_xbeta(ctx_x, d, y, a_hat):
    # x_i' beta-hat(GLS at a_hat) for every area, via numpy
    w = 1.0 / (a_hat + d)
    mat = (ctx_x.T * w) @ ctx_x
    rhs = ctx_x.T @ (w * y)
    beta = np.linalg.solve(mat, rhs)
    return ctx_x @ beta


def _replicate_worker(design, ctx, mod, z, rep, areas, kinds_needed):
    """Coverage flag and length per (method, report area) for replicate rep.

    Returns (stats_array, fail_flags); stats has shape (n_methods,
    n_areas, 2) holding (covered, length), NaN when the method failed.
    """
    m = design.m
    x = design.X
    d = design.D
    rng = replicate_rng(design.seed, rep)
    nrm = stats.standard_normals(rng, 2 * m)
    theta = math.sqrt(design.true_A) * nrm[:m]
    y = theta + np.sqrt(d) * nrm[m:]
    n_methods = len(design.methods)
    out = np.full((n_methods, len(areas), 2), np.nan)
    fails = np.zeros(n_methods, dtype=np.int64)

    def fill_cox(mi, a_hat, xb):
        for k, i in enumerate(areas):
            di = d[i]
            sig = math.sqrt(a_hat * di / (a_hat + di))
            bh = di / (a_hat + di)
            center = (1.0 - bh) * y[i] + bh * xb[i]
            hw = z * sig
            covered = (center - hw <= theta[i]) and (theta[i] <= center + hw)
            out[mi, k, 0] = 1.0 if covered else 0.0
            out[mi, k, 1] = 2.0 * hw

    # estimates shared across methods
    a_by_kind = {}
    if "reml" in kinds_needed:
        a_by_kind["reml"] = mod.fit_variance(ctx, y, mod.KIND_REML, -1, 0.0)
    if "ll" in kinds_needed:
        a_by_kind["ll"] = mod.fit_variance(ctx, y, mod.KIND_LL, -1, 0.0)

    for mi, method in enumerate(design.methods):
        if method == "direct":
            for k, i in enumerate(areas):
                hw = z * math.sqrt(d[i])
                covered = (y[i] - hw <= theta[i]) and (theta[i] <= y[i] + hw)
                out[mi, k, 0] = 1.0 if covered else 0.0
                out[mi, k, 1] = 2.0 * hw
        elif method in ("cox-reml", "cox-ll"):
            fit = a_by_kind["reml" if method == "cox-reml" else "ll"]
            a_hat, _, _, _, conv = fit
            if not conv:
                fails[mi] = 1
                continue
            fill_cox(mi, a_hat, _gls_xbeta(x, d, y, a_hat))
        elif method == "cox-anova":
            a_hat = mod.anova_estimate(ctx, y)
            fill_cox(mi, a_hat, _gls_xbeta(x, d, y, a_hat))
        elif method in ("cox-yl-gls", "cox-yl-ols"):
            # every area's own estimate enters the weight matrix behind beta
            kind = mod.KIND_YL_GLS if method == "cox-yl-gls" else mod.KIND_YL_OLS
            a_all = np.empty(m)
            ok = True
            for j in range(m):
                a_j, _, _, _, conv = mod.fit_variance(ctx, y, kind, j, z)
                if not conv:
                    ok = False
                    break
                a_all[j] = a_j
            if not ok:
                out[mi, :, :] = np.nan
                fails[mi] = 1
                continue
            w = 1.0 / (a_all + d)
            xb = x @ np.linalg.solve((x.T * w) @ x, x.T @ (w * y))
            for k, i in enumerate(areas):
                di = d[i]
                a_hat = a_all[i]
                sig = math.sqrt(a_hat * di / (a_hat + di))
                bh = di / (a_hat + di)
                center = (1.0 - bh) * y[i] + bh * xb[i]
                hw = z * sig
                covered = (center - hw <= theta[i]) and (theta[i] <= center + hw)
                out[mi, k, 0] = 1.0 if covered else 0.0
                out[mi, k, 1] = 2.0 * hw
        elif method == "cll-bootstrap":
            fit = a_by_kind["ll"]
            a_hat, _, _, _, conv = fit
            if not conv:
                fails[mi] = 1
                continue
            xb = _gls_xbeta(x, d, y, a_hat)
            piv = _bootstrap_pivot_matrix(design, ctx, mod, z, rep, areas, xb, a_hat)
            if piv is None:
                fails[mi] = 1
                continue
            for k, i in enumerate(areas):
                di = d[i]
                sig = math.sqrt(a_hat * di / (a_hat + di))
                bh = di / (a_hat + di)
                center = (1.0 - bh) * y[i] + bh * xb[i]
                ordered = np.sort(piv[:, k])
                q_lo = stats.hazen_quantile(ordered, 0.5 * design.alpha)
                q_hi = stats.hazen_quantile(ordered, 1.0 - 0.5 * design.alpha)
                lower = center + q_lo * sig
                upper = center + q_hi * sig
                covered = (lower <= theta[i]) and (theta[i] <= upper)
                out[mi, k, 0] = 1.0 if covered else 0.0
                out[mi, k, 1] = upper - lower
    return out, fails


def _bootstrap_pivot_matrix(design, ctx, mod, z, rep, areas, xb, a_hat):
    """B pivot rows for the requested areas, redrawing failures up to a
    10% budget; None when the budget is exhausted."""
    B = design.B
    m = design.m
    rng = replicate_rng(design.seed, rep, stream=1)
    area_arr = np.asarray(areas, dtype=np.int64)
    budget = int(math.ceil(BOOTSTRAP_FAILURE_BUDGET * B))
    rows = []
    want = B
    spent = 0
    while want > 0:
        nrm = stats.standard_normals(rng, (want, 2 * m))
        piv, ok = mod.bootstrap_pivots(ctx, mod.KIND_LL, area_arr, z, xb, a_hat, nrm)
        good = np.flatnonzero(ok)
        if good.size:
            rows.append(piv[good])
        failed = want - good.size
        spent += failed
        if failed == 0:
            break
        if spent > budget:
            return None
        want = failed
    return np.concatenate(rows, axis=0)[:B]


def run_simulation(design: SimulationDesign, threads: Optional[int] = None) -> SimulationReport:
    """Monte Carlo coverage/length table for the design's methods.

    Groups pool the per-area results of their member areas over all
    replicates. Failed replicates are dropped per method and tallied;
    a method failing in more than 1% of replicates aborts the run.
    """
    mod = _backend.backend()
    ctx = _backend.make_context(design.D, design.X, mod)
    z = stats.z_value(design.alpha)
    areas = design.report_areas
    kinds_needed = set()
    if "cox-reml" in design.methods:
        kinds_needed.add("reml")
    if "cox-ll" in design.methods or "cll-bootstrap" in design.methods:
        kinds_needed.add("ll")
    R = design.R
    n_methods = len(design.methods)
    results = np.empty((R, n_methods, len(areas), 2))
    fail_flags = np.zeros((R, n_methods), dtype=np.int64)

    def run_one(rep):
        out, fails = _replicate_worker(design, ctx, mod, z, rep, areas, kinds_needed)
        results[rep] = out
        fail_flags[rep] = fails

    if threads is None:
        threads = os.cpu_count() or 1
    threads = max(1, int(threads))
    if threads == 1:
        for rep in range(R):
            run_one(rep)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_one, range(R)))

    # reduction in replicate order: identical output for any worker count
    fail_totals = fail_flags.sum(axis=0)
    for mi, method in enumerate(design.methods):
        if fail_totals[mi] > MAX_FAILURE_SHARE * R:
            raise SimulationFailure(
                f"method {method} failed in {fail_totals[mi]} of {R} replicates"
            )
    n_groups = len(design.groups)
    coverage = np.zeros((n_groups, n_methods))
    mc_se = np.zeros((n_groups, n_methods))
    avg_length = np.zeros((n_groups, n_methods))
    area_pos = {i: k for k, i in enumerate(areas)}
    for gi, group in enumerate(design.groups):
        cols = [area_pos[i] for i in group]
        for mi in range(n_methods):
            n_cov = 0.0
            len_sum = 0.0
            n_cells = 0
            for rep in range(R):
                if fail_flags[rep, mi]:
                    continue
                for c in cols:
                    n_cov += results[rep, mi, c, 0]
                    len_sum += results[rep, mi, c, 1]
                    n_cells += 1
            reps_ok = R - int(fail_totals[mi])
            phat = n_cov / n_cells if n_cells else math.nan
            coverage[gi, mi] = 100.0 * phat
            mc_se[gi, mi] = 100.0 * math.sqrt(phat * (1.0 - phat) / reps_ok) if reps_ok else math.nan
            avg_length[gi, mi] = len_sum / n_cells if n_cells else math.nan
    return SimulationReport(
        design.name, design.alpha, R, design.B if "cll-bootstrap" in design.methods else 0,
        design.seed, design.methods, design.group_labels,
        coverage, mc_se, avg_length,
        {design.methods[mi]: int(fail_totals[mi]) for mi in range(n_methods)},
    )
