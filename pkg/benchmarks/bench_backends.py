"""Benchmark the compiled kernels against the pure-Python fallback.

Usage: python benchmarks/bench_backends.py [--quick]

Workloads: single-fit variance estimation across adjustment kinds, a
bootstrap pivot batch, and a small end-to-end simulation. Both backends
consume identical inputs and produce identical results (checked here),
so the comparison is purely about speed.
"""

import argparse
import time

import numpy as np

from fhci import _backend, _pykernel, pattern_design, run_simulation
from fhci import stats as fstats

try:
    from fhci import _core
except ImportError:
    _core = None

Z = 1.959963984540054


def _bench(fn, reps):
    t0 = time.perf_counter()
    for _ in range(reps):
        out = fn()
    return (time.perf_counter() - t0) / reps, out


def workload_fit(mod, reps):
    rng = np.random.default_rng(7)
    m = 15
    d = np.repeat([0.7, 0.6, 0.5, 0.4, 0.3], 3)
    x = np.ones((m, 1))
    ctx = _backend.make_context(d, x, mod)
    ys = rng.normal(0.0, 1.3, (reps, m))
    kinds = (mod.KIND_REML, mod.KIND_LL, mod.KIND_YL_GLS, mod.KIND_YL_OLS)

    def run():
        acc = 0.0
        for y in ys:
            for kind in kinds:
                area = 0 if kind >= 2 else -1
                acc += mod.fit_variance(ctx, y, kind, area, Z)[0]
        return acc

    per, out = _bench(run, 1)
    return per / (reps * len(kinds)), out


def workload_bootstrap(mod, nboot):
    m = 15
    d = np.repeat([0.7, 0.6, 0.5, 0.4, 0.3], 3)
    x = np.ones((m, 1))
    ctx = _backend.make_context(d, x, mod)
    rng = np.random.Generator(np.random.Philox(3))
    nrm = fstats.standard_normals(rng, (nboot, 2 * m))
    areas = np.arange(m, dtype=np.int64)
    xb = np.zeros(m)

    def run():
        piv, ok = mod.bootstrap_pivots(ctx, mod.KIND_LL, areas, Z, xb, 1.0, nrm)
        return float(piv.sum()), int(ok.sum())

    return _bench(run, 1)


def workload_simulation(mod, r):
    design = pattern_design(
        "a", R=r, seed=3,
        methods=("direct", "cox-reml", "cox-ll", "cox-yl-gls", "cox-yl-ols"),
    )
    saved = _backend.BACKEND
    _backend.BACKEND = mod
    try:
        per, rep = _bench(lambda: run_simulation(design, threads=1), 1)
    finally:
        _backend.BACKEND = saved
    return per, rep.to_csv()


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true", help="smaller workloads")
    args = parser.parse_args()

    if _core is None:
        print("compiled extension not available; nothing to compare")
        return

    fit_reps = 50 if args.quick else 400
    nboot = 200 if args.quick else 1000
    sim_r = 10 if args.quick else 50

    rows = []
    for label, fn in (
        (f"variance fit (m=15, avg of {4 * fit_reps})",
         lambda mod: workload_fit(mod, fit_reps)),
        (f"bootstrap pivots (B={nboot}, all areas)",
         lambda mod: workload_bootstrap(mod, nboot)),
        (f"pattern-a simulation (R={sim_r}, 5 methods)",
         lambda mod: workload_simulation(mod, sim_r)),
    ):
        t_c, out_c = fn(_core)
        t_p, out_p = fn(_pykernel)
        match = "ok" if _close(out_c, out_p) else "MISMATCH"
        rows.append((label, t_c, t_p, t_p / t_c, match))

    w = max(len(r[0]) for r in rows)
    print(f"{'workload'.ljust(w)}  {'compiled':>12}  {'python':>12}  {'speedup':>8}  results")
    for label, t_c, t_p, ratio, match in rows:
        print(f"{label.ljust(w)}  {_fmt(t_c):>12}  {_fmt(t_p):>12}  {ratio:>7.1f}x  {match}")


def _fmt(seconds):
    if seconds < 1e-3:
        return f"{seconds * 1e6:.1f} us"
    if seconds < 1.0:
        return f"{seconds * 1e3:.2f} ms"
    return f"{seconds:.2f} s"


def _close(a, b):
    if isinstance(a, tuple):
        return all(_close(x, y) for x, y in zip(a, b))
    if isinstance(a, str):
        return a == b
    return abs(a - b) <= 1e-9 * (1.0 + abs(a) + abs(b))


if __name__ == "__main__":
    main()
