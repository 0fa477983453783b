"""Compiled kernels: adjusted-likelihood scores, the global variance
optimizer and bootstrap pivots.

Twin of ``fhci._pykernel``; keep the two in lockstep, loop for loop.
The module-level functions match the fallback's signatures so either
backend can be swapped in at import time.
"""

import numpy as np

from libc.math cimport exp, fabs, log, sqrt, NAN
from libc.stdlib cimport free, malloc

KIND_REML = 0
KIND_LL = 1
KIND_YL_GLS = 2
KIND_YL_OLS = 3

cdef enum:
    C_REML = 0
    C_LL = 1
    C_GLS = 2
    C_OLS = 3

cdef enum:
    SCAN_POINTS = 200
    MAX_DOUBLINGS = 60
    MAX_SHRINKS = 20
    REFINE_MAX_ITERS = 200
    QUAD_MAX_DEPTH = 50

cdef double TIE_TOL = 1e-9
cdef double QUAD_TOL = 1e-10


cdef class KernelContext:
    """Per-dataset constants shared by every kernel call."""

    cdef readonly int m
    cdef readonly int p
    cdef double[::1] d
    cdef double[::1] x
    cdef double[::1] xtx_inv
    cdef double[::1] q
    cdef double[::1] s0
    cdef readonly double tr_ihd
    cdef readonly double mean_d


def _owned(a, dtype=np.float64):
    # contiguous, writable copy decoupled from (possibly read-only) input
    arr = np.ascontiguousarray(a, dtype=dtype)
    if not arr.flags.writeable:
        arr = arr.copy()
    return arr


def make_context(d, x, xtx_inv, q, s0, tr_ihd, mean_d):
    d = _owned(d)
    x = _owned(x)
    cdef KernelContext ctx = KernelContext()
    ctx.m = x.shape[0]
    ctx.p = x.shape[1]
    ctx.d = d
    ctx.x = x.reshape(-1)
    ctx.xtx_inv = _owned(xtx_inv).reshape(-1)
    ctx.q = _owned(q)
    ctx.s0 = _owned(s0)
    ctx.tr_ihd = tr_ihd
    ctx.mean_d = mean_d
    return ctx


cdef bint _chol(double* g, int p) noexcept nogil:
    cdef int i, j, k
    cdef double s, dj, t
    for j in range(p):
        s = g[j * p + j]
        for k in range(j):
            s -= g[j * p + k] * g[j * p + k]
        if s <= 0.0:
            return False
        dj = sqrt(s)
        g[j * p + j] = dj
        for i in range(j + 1, p):
            t = g[i * p + j]
            for k in range(j):
                t -= g[i * p + k] * g[j * p + k]
            g[i * p + j] = t / dj
    return True


cdef void _chol_solve(double* l, double* rhs, double* out, int p) noexcept nogil:
    cdef int i, k
    cdef double t
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


cdef void _chol_inverse(double* l, double* ginv, double* linv, int p) noexcept nogil:
    cdef int i, j, k, lo
    cdef double t
    for i in range(p * p):
        linv[i] = 0.0
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


cdef struct Work:
    double* g
    double* h2
    double* rhs
    double* beta
    double* ginv
    double* linv
    double* w


cdef bint _work_alloc(Work* wk, int m, int p) noexcept nogil:
    wk.g = <double*> malloc(p * p * sizeof(double))
    wk.h2 = <double*> malloc(p * p * sizeof(double))
    wk.rhs = <double*> malloc(p * sizeof(double))
    wk.beta = <double*> malloc(p * sizeof(double))
    wk.ginv = <double*> malloc(p * p * sizeof(double))
    wk.linv = <double*> malloc(p * p * sizeof(double))
    wk.w = <double*> malloc(m * sizeof(double))
    return (wk.g != NULL and wk.h2 != NULL and wk.rhs != NULL and
            wk.beta != NULL and wk.ginv != NULL and wk.linv != NULL and wk.w != NULL)


cdef void _work_free(Work* wk) noexcept nogil:
    free(wk.g)
    free(wk.h2)
    free(wk.rhs)
    free(wk.beta)
    free(wk.ginv)
    free(wk.linv)
    free(wk.w)


cdef double _score_c(KernelContext ctx, double* y, int kind, int area, double z,
                     double a, Work* wk) noexcept nogil:
    cdef int m = ctx.m
    cdef int p = ctx.p
    cdef double* d = &ctx.d[0]
    cdef double* x = &ctx.x[0]
    cdef int i, j, k, base
    cdef double wi, wi2, yi, xij, t, trv1, trv2, trp, yp2y, r, u, s, wa, da, adj, xgx, xj
    for j in range(p * p):
        wk.g[j] = 0.0
        wk.h2[j] = 0.0
    for j in range(p):
        wk.rhs[j] = 0.0
    trv1 = 0.0
    trv2 = 0.0
    for i in range(m):
        wi = 1.0 / (a + d[i])
        wk.w[i] = wi
        trv1 += wi
        trv2 += wi * wi
        wi2 = wi * wi
        yi = y[i]
        base = i * p
        for j in range(p):
            xij = x[base + j]
            wk.rhs[j] += wi * xij * yi
            for k in range(p):
                t = xij * x[base + k]
                wk.g[j * p + k] += wi * t
                wk.h2[j * p + k] += wi2 * t
    if not _chol(wk.g, p):
        return NAN
    _chol_solve(wk.g, wk.rhs, wk.beta, p)
    _chol_inverse(wk.g, wk.ginv, wk.linv, p)
    trp = trv1
    for j in range(p * p):
        trp -= wk.ginv[j] * wk.h2[j]
    yp2y = 0.0
    for i in range(m):
        base = i * p
        r = y[i]
        for j in range(p):
            r -= x[base + j] * wk.beta[j]
        u = wk.w[i] * r
        yp2y += u * u
    s = 0.5 * (yp2y - trp)
    if kind == C_REML:
        return s
    if kind == C_LL:
        return s + 1.0 / a
    wa = wk.w[area]
    da = d[area]
    adj = 2.0 * wa + (1.0 + z * z) * da * wa / (4.0 * a)
    if kind == C_GLS:
        xgx = 0.0
        base = area * p
        for j in range(p):
            xj = x[base + j]
            for k in range(p):
                xgx += wk.ginv[j * p + k] * xj * x[base + k]
        return s + adj + 0.5 * trv2 * xgx
    return s + adj + 0.5 * trv2 * (ctx.q[area] * a + ctx.s0[area])


cdef double _objective_c(KernelContext ctx, double* y, int kind, int area, double z,
                         double a, Work* wk) noexcept nogil:
    cdef int m = ctx.m
    cdef int p = ctx.p
    cdef double* d = &ctx.d[0]
    cdef double* x = &ctx.x[0]
    cdef int i, j, k, base
    cdef double vi, wi, yi, xij, trv1, sumlog, logdet, ypy, r, obj, da, lad
    for j in range(p * p):
        wk.g[j] = 0.0
    for j in range(p):
        wk.rhs[j] = 0.0
    trv1 = 0.0
    sumlog = 0.0
    for i in range(m):
        vi = a + d[i]
        wi = 1.0 / vi
        wk.w[i] = wi
        trv1 += wi
        sumlog += log(vi)
        yi = y[i]
        base = i * p
        for j in range(p):
            xij = x[base + j]
            wk.rhs[j] += wi * xij * yi
            for k in range(p):
                wk.g[j * p + k] += wi * xij * x[base + k]
    if not _chol(wk.g, p):
        return NAN
    logdet = 0.0
    for j in range(p):
        logdet += log(wk.g[j * p + j])
    logdet *= 2.0
    _chol_solve(wk.g, wk.rhs, wk.beta, p)
    ypy = 0.0
    for i in range(m):
        base = i * p
        r = y[i]
        for j in range(p):
            r -= x[base + j] * wk.beta[j]
        ypy += wk.w[i] * r * r
    obj = -0.5 * logdet - 0.5 * sumlog - 0.5 * ypy
    if kind == C_REML:
        return obj
    if kind == C_LL:
        return obj + log(a)
    da = d[area]
    lad = 2.0 * log(a + da) + 0.25 * (1.0 + z * z) * (log(a) - log(a + da))
    if kind == C_GLS:
        return obj + lad
    return obj + lad + 0.5 * ctx.q[area] * sumlog - 0.5 * trv1 * (ctx.q[area] * a + ctx.s0[area])


cdef double _k_integrand_c(KernelContext ctx, int area, double a, Work* wk) noexcept nogil:
    cdef int m = ctx.m
    cdef int p = ctx.p
    cdef double* d = &ctx.d[0]
    cdef double* x = &ctx.x[0]
    cdef int i, j, k, base
    cdef double wi, xij, trv2, xgx
    for j in range(p * p):
        wk.g[j] = 0.0
    trv2 = 0.0
    for i in range(m):
        wi = 1.0 / (a + d[i])
        trv2 += wi * wi
        base = i * p
        for j in range(p):
            xij = x[base + j]
            for k in range(p):
                wk.g[j * p + k] += wi * xij * x[base + k]
    if not _chol(wk.g, p):
        return NAN
    base = area * p
    for j in range(p):
        wk.rhs[j] = x[base + j]
    _chol_solve(wk.g, wk.rhs, wk.beta, p)
    xgx = 0.0
    for j in range(p):
        xgx += x[base + j] * wk.beta[j]
    return trv2 * xgx


cdef double _simpson_rec_c(KernelContext ctx, int area, double a, double b, double fa,
                           double fm, double fb, double whole, double tol, int depth,
                           bint* ok, Work* wk) noexcept nogil:
    cdef double mid = 0.5 * (a + b)
    cdef double lm = 0.5 * (a + mid)
    cdef double rm = 0.5 * (mid + b)
    cdef double flm = _k_integrand_c(ctx, area, lm, wk)
    cdef double frm = _k_integrand_c(ctx, area, rm, wk)
    cdef double left = (mid - a) * (fa + 4.0 * flm + fm) / 6.0
    cdef double right = (b - mid) * (fm + 4.0 * frm + fb) / 6.0
    cdef double err = left + right - whole
    cdef double v1, v2
    if fabs(err) <= 15.0 * tol:
        return left + right + err / 15.0
    if depth <= 0:
        ok[0] = False
        return left + right
    v1 = _simpson_rec_c(ctx, area, a, mid, fa, flm, fm, left, 0.5 * tol, depth - 1, ok, wk)
    v2 = _simpson_rec_c(ctx, area, mid, b, fm, frm, fb, right, 0.5 * tol, depth - 1, ok, wk)
    return v1 + v2


cdef double _quad_k_c(KernelContext ctx, int area, double a, double b, bint* ok,
                      Work* wk) noexcept nogil:
    cdef double fa, fb, fm, mid, whole
    ok[0] = True
    if a == b:
        return 0.0
    fa = _k_integrand_c(ctx, area, a, wk)
    fb = _k_integrand_c(ctx, area, b, wk)
    mid = 0.5 * (a + b)
    fm = _k_integrand_c(ctx, area, mid, wk)
    whole = (b - a) * (fa + 4.0 * fm + fb) / 6.0
    return _simpson_rec_c(ctx, area, a, b, fa, fm, fb, whole, QUAD_TOL, QUAD_MAX_DEPTH, ok, wk)


cdef double _log_adjustment_delta_c(KernelContext ctx, int kind, int area, double z,
                                    double a_ref, double a, bint* ok, Work* wk) noexcept nogil:
    cdef double da, closed, sumlog_a, sumlog_r, trv1_a, trv1_r, qa, s0a, di, val
    cdef int i
    ok[0] = True
    if kind == C_REML:
        return 0.0
    if kind == C_LL:
        return log(a) - log(a_ref)
    da = ctx.d[area]
    closed = (2.0 * (log(a + da) - log(a_ref + da))
              + 0.25 * (1.0 + z * z) * ((log(a) - log(a + da))
                                        - (log(a_ref) - log(a_ref + da))))
    if kind == C_OLS:
        sumlog_a = 0.0
        sumlog_r = 0.0
        trv1_a = 0.0
        trv1_r = 0.0
        for i in range(ctx.m):
            di = ctx.d[i]
            sumlog_a += log(a + di)
            sumlog_r += log(a_ref + di)
            trv1_a += 1.0 / (a + di)
            trv1_r += 1.0 / (a_ref + di)
        qa = ctx.q[area]
        s0a = ctx.s0[area]
        closed += 0.5 * qa * (sumlog_a - sumlog_r)
        closed -= 0.5 * (trv1_a * (qa * a + s0a) - trv1_r * (qa * a_ref + s0a))
        return closed
    val = _quad_k_c(ctx, area, a_ref, a, ok, wk)
    return closed + 0.5 * val


cdef double _objective_delta_c(KernelContext ctx, double* y, int kind, int area, double z,
                               double a1, double a2, bint* ok, Work* wk) noexcept nogil:
    cdef double d = (_objective_c(ctx, y, kind, area, z, a1, wk)
                     - _objective_c(ctx, y, kind, area, z, a2, wk))
    cdef double val
    cdef bint qok = True
    ok[0] = True
    if kind == C_GLS:
        val = _quad_k_c(ctx, area, a2, a1, &qok, wk)
        if not qok:
            ok[0] = False
            return d
        d += 0.5 * val
    return d


cdef double _anova_c(KernelContext ctx, double* y, Work* wk) noexcept nogil:
    cdef int m = ctx.m
    cdef int p = ctx.p
    cdef double* x = &ctx.x[0]
    cdef int i, j, k, base
    cdef double yty, yi, quad, a
    yty = 0.0
    for j in range(p):
        wk.rhs[j] = 0.0
    for i in range(m):
        yi = y[i]
        yty += yi * yi
        base = i * p
        for j in range(p):
            wk.rhs[j] += x[base + j] * yi
    quad = 0.0
    for j in range(p):
        for k in range(p):
            quad += ctx.xtx_inv[j * p + k] * wk.rhs[j] * wk.rhs[k]
    a = (yty - quad - ctx.tr_ihd) / (m - p)
    return a if a > 0.0 else 0.0


cdef double _refine_c(KernelContext ctx, double* y, int kind, int area, double z,
                      double lo, double hi, double flo, double fhi, Work* wk) noexcept nogil:
    cdef int it
    cdef double tol, width, xnew, fx, den
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
            if not (lo < xnew and xnew < hi):
                xnew = 0.5 * (lo + hi)
        fx = _score_c(ctx, y, kind, area, z, xnew, wk)
        if fx > 0.0:
            lo = xnew
            flo = fx
        else:
            hi = xnew
            fhi = fx
    return 0.5 * (lo + hi)


cdef double _fit_c(KernelContext ctx, double* y, int kind, int area, double z,
                   double* grid, double* scores,
                   double* score_at, int* n_max, bint* at_boundary, bint* converged,
                   Work* wk) noexcept nogil:
    cdef double a_lo = 1e-10 * ctx.mean_d
    cdef double a_hi = 100.0 * ctx.mean_d
    cdef double seed_hi = 50.0 * _anova_c(ctx, y, wk)
    cdef int n = SCAN_POINTS
    cdef double lg_lo, step, ak, hi_a, hi_s, t, st, lo_a, lo_s, cur, best, delta
    cdef int k, n_cand, i
    cdef bint found, ok
    # candidate buffer shares the grid storage tail; worst case is small
    cdef double cand[SCAN_POINTS + 2]
    if seed_hi > a_hi:
        a_hi = seed_hi
    lg_lo = log(a_lo)
    step = (log(a_hi) - lg_lo) / (n - 1)
    for k in range(n):
        ak = exp(lg_lo + step * k)
        grid[k] = ak
        scores[k] = _score_c(ctx, y, kind, area, z, ak, wk)
    converged[0] = True
    n_cand = 0
    if kind == C_REML:
        if not scores[0] > 0.0:
            cand[n_cand] = 0.0
            n_cand += 1
    elif not scores[0] > 0.0:
        hi_a = grid[0]
        hi_s = scores[0]
        t = grid[0]
        found = False
        for k in range(MAX_SHRINKS):
            t *= 1e-2
            st = _score_c(ctx, y, kind, area, z, t, wk)
            if st > 0.0:
                cand[n_cand] = _refine_c(ctx, y, kind, area, z, t, hi_a, st, hi_s, wk)
                n_cand += 1
                found = True
                break
            hi_a = t
            hi_s = st
        if not found:
            cand[n_cand] = grid[0]
            n_cand += 1
            converged[0] = False
    for k in range(n - 1):
        if scores[k] > 0.0 and not scores[k + 1] > 0.0:
            cand[n_cand] = _refine_c(ctx, y, kind, area, z, grid[k], grid[k + 1],
                                     scores[k], scores[k + 1], wk)
            n_cand += 1
    if scores[n - 1] > 0.0:
        lo_a = grid[n - 1]
        lo_s = scores[n - 1]
        cur = grid[n - 1]
        found = False
        for k in range(MAX_DOUBLINGS):
            cur *= 2.0
            st = _score_c(ctx, y, kind, area, z, cur, wk)
            if not st > 0.0:
                cand[n_cand] = _refine_c(ctx, y, kind, area, z, lo_a, cur, lo_s, st, wk)
                n_cand += 1
                found = True
                break
            lo_a = cur
            lo_s = st
        if not found:
            cand[n_cand] = cur
            n_cand += 1
            converged[0] = False
    if n_cand == 0:
        if kind == C_REML:
            cand[0] = 0.0
        else:
            cand[0] = a_lo
            converged[0] = False
        n_cand = 1
    best = cand[0]
    for i in range(1, n_cand):
        ok = True
        delta = _objective_delta_c(ctx, y, kind, area, z, cand[i], best, &ok, wk)
        if not ok:
            converged[0] = False
        if delta > TIE_TOL:
            best = cand[i]
    if best > 0.0 or kind == C_REML:
        score_at[0] = _score_c(ctx, y, kind, area, z, best, wk)
    else:
        score_at[0] = NAN
    n_max[0] = n_cand
    at_boundary[0] = (kind == C_REML and best == 0.0)
    return best


def adjusted_score(KernelContext ctx, y, int kind, int area, double z, double a):
    cdef double[::1] yv = _owned(y)
    cdef Work wk
    cdef double out
    if not _work_alloc(&wk, ctx.m, ctx.p):
        _work_free(&wk)
        raise MemoryError
    try:
        out = _score_c(ctx, &yv[0], kind, area, z, a, &wk)
    finally:
        _work_free(&wk)
    return out


def reml_loglik(KernelContext ctx, y, double a):
    return objective(ctx, y, C_REML, -1, 0.0, a)


def objective(KernelContext ctx, y, int kind, int area, double z, double a):
    cdef double[::1] yv = _owned(y)
    cdef Work wk
    cdef double out
    if not _work_alloc(&wk, ctx.m, ctx.p):
        _work_free(&wk)
        raise MemoryError
    try:
        out = _objective_c(ctx, &yv[0], kind, area, z, a, &wk)
    finally:
        _work_free(&wk)
    return out


def log_adjustment_delta(KernelContext ctx, int kind, int area, double z,
                         double a_ref, double a):
    cdef Work wk
    cdef bint ok = True
    cdef double out
    if not _work_alloc(&wk, ctx.m, ctx.p):
        _work_free(&wk)
        raise MemoryError
    try:
        out = _log_adjustment_delta_c(ctx, kind, area, z, a_ref, a, &ok, &wk)
    finally:
        _work_free(&wk)
    return out, bool(ok)


def objective_delta(KernelContext ctx, y, int kind, int area, double z,
                    double a1, double a2):
    cdef double[::1] yv = _owned(y)
    cdef Work wk
    cdef bint ok = True
    cdef double out
    if not _work_alloc(&wk, ctx.m, ctx.p):
        _work_free(&wk)
        raise MemoryError
    try:
        out = _objective_delta_c(ctx, &yv[0], kind, area, z, a1, a2, &ok, &wk)
    finally:
        _work_free(&wk)
    return out, bool(ok)


def anova_estimate(KernelContext ctx, y):
    cdef double[::1] yv = _owned(y)
    cdef Work wk
    cdef double out
    if not _work_alloc(&wk, ctx.m, ctx.p):
        _work_free(&wk)
        raise MemoryError
    try:
        out = _anova_c(ctx, &yv[0], &wk)
    finally:
        _work_free(&wk)
    return out


def fit_variance(KernelContext ctx, y, int kind, int area, double z):
    cdef double[::1] yv = _owned(y)
    cdef Work wk
    cdef double a_hat, score_at
    cdef int n_max
    cdef bint at_boundary, converged
    cdef double* grid
    cdef double* scores
    if not _work_alloc(&wk, ctx.m, ctx.p):
        _work_free(&wk)
        raise MemoryError
    grid = <double*> malloc(SCAN_POINTS * sizeof(double))
    scores = <double*> malloc(SCAN_POINTS * sizeof(double))
    if grid == NULL or scores == NULL:
        free(grid)
        free(scores)
        _work_free(&wk)
        raise MemoryError
    try:
        with nogil:
            a_hat = _fit_c(ctx, &yv[0], kind, area, z, grid, scores,
                           &score_at, &n_max, &at_boundary, &converged, &wk)
    finally:
        free(grid)
        free(scores)
        _work_free(&wk)
    return a_hat, score_at, n_max, bool(at_boundary), bool(converged)


def bootstrap_pivots(KernelContext ctx, int kind, areas, double z, xbhat,
                     double a_hat, normals):
    cdef long[::1] areas_v = _owned(areas, np.int64)
    cdef double[::1] xb_v = _owned(xbhat)
    cdef double[:, ::1] nrm = _owned(normals)
    cdef int m = ctx.m
    cdef int p = ctx.p
    cdef int nb = nrm.shape[0]
    cdef int k = areas_v.shape[0]
    if kind == C_GLS or kind == C_OLS:
        if k != 1:
            raise ValueError("area-specific kinds bootstrap one area at a time")
    pivots_arr = np.zeros((nb, k), dtype=np.float64)
    ok_arr = np.zeros(nb, dtype=np.uint8)
    cdef double[:, ::1] pivots = pivots_arr
    cdef unsigned char[::1] ok = ok_arr
    cdef Work wk
    cdef double* grid
    cdef double* scores
    cdef double* theta
    cdef double* ystar
    cdef double* sqd
    cdef double sqa = sqrt(a_hat)
    cdef int b, i, j, kk, idx, ai, base, fit_area, n_max
    cdef double th, a_star, score_at, wi, yi, xij, di, denom, sig, bh, xb, eb
    cdef bint at_boundary, converged, row_ok
    if not _work_alloc(&wk, m, p):
        _work_free(&wk)
        raise MemoryError
    grid = <double*> malloc(SCAN_POINTS * sizeof(double))
    scores = <double*> malloc(SCAN_POINTS * sizeof(double))
    theta = <double*> malloc(m * sizeof(double))
    ystar = <double*> malloc(m * sizeof(double))
    sqd = <double*> malloc(m * sizeof(double))
    if grid == NULL or scores == NULL or theta == NULL or ystar == NULL or sqd == NULL:
        free(grid)
        free(scores)
        free(theta)
        free(ystar)
        free(sqd)
        _work_free(&wk)
        raise MemoryError
    fit_area = areas_v[0] if (kind == C_GLS or kind == C_OLS) else -1
    try:
        with nogil:
            for i in range(m):
                sqd[i] = sqrt(ctx.d[i])
            for b in range(nb):
                for i in range(m):
                    th = xb_v[i] + sqa * nrm[b, i]
                    theta[i] = th
                    ystar[i] = th + sqd[i] * nrm[b, m + i]
                a_star = _fit_c(ctx, ystar, kind, fit_area, z, grid, scores,
                                &score_at, &n_max, &at_boundary, &converged, &wk)
                if (not converged) or a_star <= 0.0:
                    continue
                for j in range(p * p):
                    wk.g[j] = 0.0
                for j in range(p):
                    wk.rhs[j] = 0.0
                for i in range(m):
                    wi = 1.0 / (a_star + ctx.d[i])
                    yi = ystar[i]
                    base = i * p
                    for j in range(p):
                        xij = ctx.x[base + j]
                        wk.rhs[j] += wi * xij * yi
                        for kk in range(p):
                            wk.g[j * p + kk] += wi * xij * ctx.x[base + kk]
                if not _chol(wk.g, p):
                    continue
                _chol_solve(wk.g, wk.rhs, wk.beta, p)
                row_ok = True
                for idx in range(k):
                    ai = areas_v[idx]
                    di = ctx.d[ai]
                    denom = a_star + di
                    sig = sqrt(a_star * di / denom)
                    if sig <= 0.0:
                        row_ok = False
                        break
                    bh = di / denom
                    xb = 0.0
                    base = ai * p
                    for j in range(p):
                        xb += ctx.x[base + j] * wk.beta[j]
                    eb = (1.0 - bh) * ystar[ai] + bh * xb
                    pivots[b, idx] = (theta[ai] - eb) / sig
                if row_ok:
                    ok[b] = 1
    finally:
        free(grid)
        free(scores)
        free(theta)
        free(ystar)
        free(sqd)
        _work_free(&wk)
    return pivots_arr, ok_arr
