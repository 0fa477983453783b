"""Scalar reference kernels: adjusted-likelihood scores, the global
variance optimizer and bootstrap pivots.

This module is the pure-Python twin of the compiled extension
``fhci._core`` and is selected at import time when the extension is
missing (or when FHCI_BACKEND=python). The two are kept in lockstep,
loop for loop and operation for operation, so results agree to the last
bit on a given platform; mirror any change here in ``_core.pyx``.

Plain floats and flat lists are used instead of numpy scalars: inside
these tight loops they are both faster and bit-identical to the C code.
"""

from __future__ import annotations

import math

import numpy as np

KIND_REML = 0
KIND_LL = 1
KIND_YL_GLS = 2
KIND_YL_OLS = 3

SCAN_POINTS = 200
MAX_DOUBLINGS = 60
MAX_SHRINKS = 20
REFINE_MAX_ITERS = 200
TIE_TOL = 1e-9
QUAD_TOL = 1e-10
QUAD_MAX_DEPTH = 50


class KernelContext:
    """Per-dataset constants shared by every kernel call.

    The derived quantities (xtx_inv, q, s0, tr_ihd, mean_d) are computed
    once by the caller so both backends consume identical values.
    """

    __slots__ = ("m", "p", "d", "x", "xtx_inv", "q", "s0", "tr_ihd", "mean_d")

    def __init__(self, d, x_flat, xtx_inv_flat, q, s0, tr_ihd, mean_d, m, p):
        self.m = m
        self.p = p
        self.d = d
        self.x = x_flat
        self.xtx_inv = xtx_inv_flat
        self.q = q
        self.s0 = s0
        self.tr_ihd = tr_ihd
        self.mean_d = mean_d


def make_context(d, x, xtx_inv, q, s0, tr_ihd, mean_d):
    d = np.ascontiguousarray(d, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    m, p = x.shape
    return KernelContext(
        d.tolist(),
        x.ravel().tolist(),
        np.ascontiguousarray(xtx_inv, dtype=np.float64).ravel().tolist(),
        np.asarray(q, dtype=np.float64).tolist(),
        np.asarray(s0, dtype=np.float64).tolist(),
        float(tr_ihd),
        float(mean_d),
        m,
        p,
    )


def _chol(g, p):
    # In-place lower Cholesky factor; False when a pivot is not positive.
    for j in range(p):
        s = g[j * p + j]
        for k in range(j):
            s -= g[j * p + k] * g[j * p + k]
        if s <= 0.0:
            return False
        dj = math.sqrt(s)
        g[j * p + j] = dj
        for i in range(j + 1, p):
            t = g[i * p + j]
            for k in range(j):
                t -= g[i * p + k] * g[j * p + k]
            g[i * p + j] = t / dj
    return True


def _chol_solve(l, rhs, out, p):
    for i in range(p):
        t = rhs[i]
        for k in range(i):
            t -= l[i * p + k] * out[k]
        out[i] = t / l[i * p + i]
    for i in range(p - 1, -1, -1):
        t = out[i]
        for k in range(i + 1, p):
            t -= l[k * p + i] * out[k]
        out[i] = t / l[i * p + i]


def _chol_inverse(l, ginv, p):
    # ginv = (L L')^{-1} via the triangular inverse.
    linv = [0.0] * (p * p)
    for j in range(p):
        linv[j * p + j] = 1.0 / l[j * p + j]
        for i in range(j + 1, p):
            t = 0.0
            for k in range(j, i):
                t -= l[i * p + k] * linv[k * p + j]
            linv[i * p + j] = t / l[i * p + i]
    for i in range(p):
        for j in range(p):
            t = 0.0
            lo = i if i > j else j
            for k in range(lo, p):
                t += linv[k * p + i] * linv[k * p + j]
            ginv[i * p + j] = t


def _score(ctx, y, kind, area, z, a):
    """Derivative of the adjusted residual log-likelihood at a."""
    m = ctx.m
    p = ctx.p
    d = ctx.d
    x = ctx.x
    g = [0.0] * (p * p)
    h2 = [0.0] * (p * p)
    rhs = [0.0] * p
    beta = [0.0] * p
    w = [0.0] * m
    trv1 = 0.0
    trv2 = 0.0
    for i in range(m):
        wi = 1.0 / (a + d[i])
        w[i] = wi
        trv1 += wi
        trv2 += wi * wi
        wi2 = wi * wi
        yi = y[i]
        base = i * p
        for j in range(p):
            xij = x[base + j]
            rhs[j] += wi * xij * yi
            for k in range(p):
                t = xij * x[base + k]
                g[j * p + k] += wi * t
                h2[j * p + k] += wi2 * t
    if not _chol(g, p):
        return math.nan
    _chol_solve(g, rhs, beta, p)
    ginv = [0.0] * (p * p)
    _chol_inverse(g, ginv, p)
    trp = trv1
    for j in range(p * p):
        trp -= ginv[j] * h2[j]
    yp2y = 0.0
    for i in range(m):
        base = i * p
        r = y[i]
        for j in range(p):
            r -= x[base + j] * beta[j]
        u = w[i] * r
        yp2y += u * u
    s = 0.5 * (yp2y - trp)
    if kind == KIND_REML:
        return s
    if kind == KIND_LL:
        return s + 1.0 / a
    wa = w[area]
    da = d[area]
    adj = 2.0 * wa + (1.0 + z * z) * da * wa / (4.0 * a)
    if kind == KIND_YL_GLS:
        xgx = 0.0
        basea = area * p
        for j in range(p):
            xj = x[basea + j]
            for k in range(p):
                xgx += ginv[j * p + k] * xj * x[basea + k]
        return s + adj + 0.5 * trv2 * xgx
    return s + adj + 0.5 * trv2 * (ctx.q[area] * a + ctx.s0[area])


def _objective(ctx, y, kind, area, z, a):
    """Adjusted residual log-likelihood at a, up to the gls integral term.

    For KIND_YL_GLS the non-closed-form part of the log adjustment is
    excluded; objective differences add it back through quadrature.
    """
    m = ctx.m
    p = ctx.p
    d = ctx.d
    x = ctx.x
    g = [0.0] * (p * p)
    rhs = [0.0] * p
    beta = [0.0] * p
    w = [0.0] * m
    trv1 = 0.0
    sumlog = 0.0
    for i in range(m):
        vi = a + d[i]
        wi = 1.0 / vi
        w[i] = wi
        trv1 += wi
        sumlog += math.log(vi)
        yi = y[i]
        base = i * p
        for j in range(p):
            xij = x[base + j]
            rhs[j] += wi * xij * yi
            for k in range(p):
                g[j * p + k] += wi * xij * x[base + k]
    if not _chol(g, p):
        return math.nan
    logdet = 0.0
    for j in range(p):
        logdet += math.log(g[j * p + j])
    logdet *= 2.0
    _chol_solve(g, rhs, beta, p)
    ypy = 0.0
    for i in range(m):
        base = i * p
        r = y[i]
        for j in range(p):
            r -= x[base + j] * beta[j]
        ypy += w[i] * r * r
    obj = -0.5 * logdet - 0.5 * sumlog - 0.5 * ypy
    if kind == KIND_REML:
        return obj
    if kind == KIND_LL:
        return obj + math.log(a)
    da = d[area]
    lad = 2.0 * math.log(a + da) + 0.25 * (1.0 + z * z) * (math.log(a) - math.log(a + da))
    if kind == KIND_YL_GLS:
        return obj + lad
    return obj + lad + 0.5 * ctx.q[area] * sumlog - 0.5 * trv1 * (ctx.q[area] * a + ctx.s0[area])


def _k_integrand(ctx, area, a):
    # tr(V^-2) x_i'(X'V^-1 X)^-1 x_i, the gls adjustment slope term.
    m = ctx.m
    p = ctx.p
    d = ctx.d
    x = ctx.x
    g = [0.0] * (p * p)
    trv2 = 0.0
    for i in range(m):
        wi = 1.0 / (a + d[i])
        trv2 += wi * wi
        base = i * p
        for j in range(p):
            xij = x[base + j]
            for k in range(p):
                g[j * p + k] += wi * xij * x[base + k]
    if not _chol(g, p):
        return math.nan
    basea = area * p
    rhs = [0.0] * p
    for j in range(p):
        rhs[j] = x[basea + j]
    u = [0.0] * p
    _chol_solve(g, rhs, u, p)
    xgx = 0.0
    for j in range(p):
        xgx += x[basea + j] * u[j]
    return trv2 * xgx


def _simpson_rec(ctx, area, a, b, fa, fm, fb, whole, tol, depth):
    mid = 0.5 * (a + b)
    lm = 0.5 * (a + mid)
    rm = 0.5 * (mid + b)
    flm = _k_integrand(ctx, area, lm)
    frm = _k_integrand(ctx, area, rm)
    left = (mid - a) * (fa + 4.0 * flm + fm) / 6.0
    right = (b - mid) * (fm + 4.0 * frm + fb) / 6.0
    err = left + right - whole
    if abs(err) <= 15.0 * tol:
        return left + right + err / 15.0, True
    if depth <= 0:
        return left + right, False
    v1, ok1 = _simpson_rec(ctx, area, a, mid, fa, flm, fm, left, 0.5 * tol, depth - 1)
    v2, ok2 = _simpson_rec(ctx, area, mid, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    return v1 + v2, ok1 and ok2


def _quad_k(ctx, area, a, b):
    """Signed adaptive-Simpson integral of the gls slope term over [a, b]."""
    if a == b:
        return 0.0, True
    fa = _k_integrand(ctx, area, a)
    fb = _k_integrand(ctx, area, b)
    mid = 0.5 * (a + b)
    fm = _k_integrand(ctx, area, mid)
    whole = (b - a) * (fa + 4.0 * fm + fb) / 6.0
    return _simpson_rec(ctx, area, a, b, fa, fm, fb, whole, QUAD_TOL, QUAD_MAX_DEPTH)


def _log_adjustment_delta(ctx, kind, area, z, a_ref, a):
    if kind == KIND_REML:
        return 0.0, True
    if kind == KIND_LL:
        return math.log(a) - math.log(a_ref), True
    da = ctx.d[area]
    closed = (2.0 * (math.log(a + da) - math.log(a_ref + da))
              + 0.25 * (1.0 + z * z) * ((math.log(a) - math.log(a + da))
                                        - (math.log(a_ref) - math.log(a_ref + da))))
    if kind == KIND_YL_OLS:
        sumlog_a = 0.0
        sumlog_r = 0.0
        trv1_a = 0.0
        trv1_r = 0.0
        for i in range(ctx.m):
            di = ctx.d[i]
            sumlog_a += math.log(a + di)
            sumlog_r += math.log(a_ref + di)
            trv1_a += 1.0 / (a + di)
            trv1_r += 1.0 / (a_ref + di)
        qa = ctx.q[area]
        s0a = ctx.s0[area]
        closed += 0.5 * qa * (sumlog_a - sumlog_r)
        closed -= 0.5 * (trv1_a * (qa * a + s0a) - trv1_r * (qa * a_ref + s0a))
        return closed, True
    val, ok = _quad_k(ctx, area, a_ref, a)
    return closed + 0.5 * val, ok


def log_adjustment_delta(ctx, kind, area, z, a_ref, a):
    return _log_adjustment_delta(ctx, kind, area, z, a_ref, a)


def _objective_delta(ctx, y, kind, area, z, a1, a2):
    # objective(a1) - objective(a2), the gls quadrature term included.
    d = _objective(ctx, y, kind, area, z, a1) - _objective(ctx, y, kind, area, z, a2)
    if kind == KIND_YL_GLS:
        val, ok = _quad_k(ctx, area, a2, a1)
        if not ok:
            return d, False
        d += 0.5 * val
    return d, True


def objective_delta(ctx, y, kind, area, z, a1, a2):
    return _objective_delta(ctx, y, kind, area, z, a1, a2)


def anova_estimate(ctx, y):
    """Truncated moment estimate of the model variance; optimizer seed."""
    m = ctx.m
    p = ctx.p
    x = ctx.x
    yty = 0.0
    xty = [0.0] * p
    for i in range(m):
        yi = y[i]
        yty += yi * yi
        base = i * p
        for j in range(p):
            xty[j] += x[base + j] * yi
    quad = 0.0
    for j in range(p):
        for k in range(p):
            quad += ctx.xtx_inv[j * p + k] * xty[j] * xty[k]
    a = (yty - quad - ctx.tr_ihd) / (m - p)
    return a if a > 0.0 else 0.0


def _refine(ctx, y, kind, area, z, lo, hi, flo, fhi):
    # Root of the score in (lo, hi) given flo > 0 >= fhi: secant steps
    # through the bracket endpoints, bisection every other iteration.
    for it in range(REFINE_MAX_ITERS):
        tol = 1e-10 * (1.0 + hi)
        width = hi - lo
        if width <= tol:
            break
        if it & 1:
            xnew = 0.5 * (lo + hi)
        else:
            den = fhi - flo
            if den != 0.0:
                xnew = hi - fhi * width / den
            else:
                xnew = 0.5 * (lo + hi)
            if not lo < xnew < hi:
                xnew = 0.5 * (lo + hi)
        fx = _score(ctx, y, kind, area, z, xnew)
        if fx > 0.0:
            lo = xnew
            flo = fx
        else:
            hi = xnew
            fhi = fx
    return 0.5 * (lo + hi)


def fit_variance(ctx, y, kind, area, z):
    """Global maximizer of the adjusted residual likelihood over [0, inf).

    Returns (a_hat, score_at_solution, n_maxima, at_boundary, converged).
    Strategy: log-spaced score scan for sign changes, safeguarded secant
    refinement of each down-crossing, then candidate comparison through
    objective differences (quadrature for the gls kind). Ties within
    1e-9 go to the smallest candidate.
    """
    y = _as_list(y)
    a_lo = 1e-10 * ctx.mean_d
    a_hi = 100.0 * ctx.mean_d
    seed_hi = 50.0 * anova_estimate(ctx, y)
    if seed_hi > a_hi:
        a_hi = seed_hi
    n = SCAN_POINTS
    lg_lo = math.log(a_lo)
    step = (math.log(a_hi) - lg_lo) / (n - 1)
    grid = [0.0] * n
    scores = [0.0] * n
    for k in range(n):
        ak = math.exp(lg_lo + step * k)
        grid[k] = ak
        scores[k] = _score(ctx, y, kind, area, z, ak)
    converged = True
    candidates = []
    if kind == KIND_REML:
        if not scores[0] > 0.0:
            candidates.append(0.0)
    elif not scores[0] > 0.0:
        # The adjustment slope blows up as A -> 0, so a positive score
        # exists below the grid for any sane dataset; walk down to it.
        hi_a = grid[0]
        hi_s = scores[0]
        t = grid[0]
        found = False
        for _ in range(MAX_SHRINKS):
            t *= 1e-2
            st = _score(ctx, y, kind, area, z, t)
            if st > 0.0:
                candidates.append(_refine(ctx, y, kind, area, z, t, hi_a, st, hi_s))
                found = True
                break
            hi_a = t
            hi_s = st
        if not found:
            candidates.append(grid[0])
            converged = False
    for k in range(n - 1):
        if scores[k] > 0.0 and not scores[k + 1] > 0.0:
            candidates.append(
                _refine(ctx, y, kind, area, z, grid[k], grid[k + 1], scores[k], scores[k + 1])
            )
    if scores[n - 1] > 0.0:
        lo_a = grid[n - 1]
        lo_s = scores[n - 1]
        cur = grid[n - 1]
        found = False
        for _ in range(MAX_DOUBLINGS):
            cur *= 2.0
            st = _score(ctx, y, kind, area, z, cur)
            if not st > 0.0:
                candidates.append(_refine(ctx, y, kind, area, z, lo_a, cur, lo_s, st))
                found = True
                break
            lo_a = cur
            lo_s = st
        if not found:
            candidates.append(cur)
            converged = False
    if not candidates:
        if kind == KIND_REML:
            candidates.append(0.0)
        else:
            candidates.append(a_lo)
            converged = False
    best = candidates[0]
    for c in candidates[1:]:
        delta, ok = _objective_delta(ctx, y, kind, area, z, c, best)
        if not ok:
            converged = False
        if delta > TIE_TOL:
            best = c
    if best > 0.0 or kind == KIND_REML:
        score_at = _score(ctx, y, kind, area, z, best)
    else:
        score_at = math.nan
    at_boundary = kind == KIND_REML and best == 0.0
    return best, score_at, len(candidates), at_boundary, converged


def _as_list(y):
    if isinstance(y, list):
        return y
    return np.asarray(y, dtype=np.float64).tolist()


def adjusted_score(ctx, y, kind, area, z, a):
    return _score(ctx, _as_list(y), kind, area, z, a)


def reml_loglik(ctx, y, a):
    return _objective(ctx, _as_list(y), KIND_REML, -1, 0.0, a)


def objective(ctx, y, kind, area, z, a):
    return _objective(ctx, _as_list(y), kind, area, z, a)


def bootstrap_pivots(ctx, kind, areas, z, xbhat, a_hat, normals):
    """Pivot draws for the parametric bootstrap.

    normals has one row of 2m standard normals per bootstrap replicate
    (area effects first, then sampling errors). Returns (pivots, ok)
    where rows with failed re-estimation carry ok = 0.
    """
    areas = [int(a) for a in np.asarray(areas).ravel()]
    xbhat = _as_list(xbhat)
    normals = np.ascontiguousarray(normals, dtype=np.float64)
    nb = normals.shape[0]
    flat = normals.ravel().tolist()
    m = ctx.m
    p = ctx.p
    k = len(areas)
    if kind in (KIND_YL_GLS, KIND_YL_OLS) and k != 1:
        raise ValueError("area-specific kinds bootstrap one area at a time")
    d = ctx.d
    x = ctx.x
    sqa = math.sqrt(a_hat)
    sqd = [math.sqrt(v) for v in d]
    pivots = np.zeros((nb, k), dtype=np.float64)
    ok = np.zeros(nb, dtype=np.uint8)
    theta = [0.0] * m
    ystar = [0.0] * m
    g = [0.0] * (p * p)
    rhs = [0.0] * p
    beta = [0.0] * p
    for b in range(nb):
        off = b * 2 * m
        for i in range(m):
            th = xbhat[i] + sqa * flat[off + i]
            theta[i] = th
            ystar[i] = th + sqd[i] * flat[off + m + i]
        fit_area = areas[0] if kind in (KIND_YL_GLS, KIND_YL_OLS) else -1
        a_star, _, _, _, conv = fit_variance(ctx, ystar, kind, fit_area, z)
        if not conv or a_star <= 0.0:
            continue
        for j in range(p * p):
            g[j] = 0.0
        for j in range(p):
            rhs[j] = 0.0
        for i in range(m):
            wi = 1.0 / (a_star + d[i])
            yi = ystar[i]
            base = i * p
            for j in range(p):
                xij = x[base + j]
                rhs[j] += wi * xij * yi
                for kk in range(p):
                    g[j * p + kk] += wi * xij * x[base + kk]
        if not _chol(g, p):
            continue
        _chol_solve(g, rhs, beta, p)
        row_ok = True
        for idx in range(k):
            ai = areas[idx]
            di = d[ai]
            denom = a_star + di
            sig = math.sqrt(a_star * di / denom)
            if sig <= 0.0:
                row_ok = False
                break
            bh = di / denom
            xb = 0.0
            base = ai * p
            for j in range(p):
                xb += x[base + j] * beta[j]
            eb = (1.0 - bh) * ystar[ai] + bh * xb
            pivots[b, idx] = (theta[ai] - eb) / sig
        if row_ok:
            ok[b] = 1
    return pivots, ok
