"""Command-line surface: fit, interval, diagnose, simulate.

Exit codes: 0 success, 2 input validation, 3 numerical failure,
4 internal error.
"""

from __future__ import annotations

import functools
import os
import sys

import click

from . import _backend, stats
from .coverage import expansion
from .errors import FhciInputError, FhciNumericalError
from .intervals import bootstrap_interval, cox_intervals_all_areas, direct_interval
from .model import eb_estimate, fit_regression, fit_regression_mixed, load_csv
from .mse import mse_estimate
from .simulation import ALL_METHODS, design_from_pattern, run_simulation
from .variance import (
    AdjustmentFactor,
    anova_estimate,
    estimate_variance,
    yl_estimates_all_areas,
)

FIT_METHODS = ("reml", "anova", "ll", "yl-gls", "yl-ols")
INTERVAL_METHODS = (
    "direct", "cox-reml", "cox-anova", "cox-ll",
    "cox-yl-gls", "cox-yl-ols", "cll-bootstrap",
)

_ADJ_NAME = {"reml": "reml", "ll": "li-lahiri", "yl-gls": "yl-gls", "yl-ols": "yl-ols"}


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except FhciInputError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except FhciNumericalError as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(3)
        except click.ClickException:
            raise
        except Exception as exc:  # pragma: no cover - defensive
            click.echo(f"internal error: {exc}", err=True)
            sys.exit(4)

    return wrapper


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        click.echo(text, nl=False)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


@click.group()
@click.version_option(package_name="fhci")
def main():
    """Small-area interval estimation under the Fay-Herriot model."""


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--method", default="yl-gls", type=click.Choice(FIT_METHODS))
@click.option("--alpha", default=0.05, type=float, show_default=True)
@click.option("--out", default=None, help="Output CSV path (default: stdout).")
@handle_errors
def fit(data, method, alpha, out):
    """Per-area EB fit: area,y,D,theta_eb,B_hat,A_hat,se,mse_hat."""
    ds = load_csv(data)
    z = stats.z_value(alpha)
    lines = ["area,y,D,theta_eb,B_hat,A_hat,se,mse_hat"]
    if method == "anova":
        a_hats = [anova_estimate(ds)] * ds.m
        beta = fit_regression(ds, a_hats[0], "gls").beta_hat
    elif method in ("reml", "ll"):
        a_hats = [estimate_variance(ds, AdjustmentFactor(_ADJ_NAME[method])).a_hat] * ds.m
        beta = fit_regression(ds, a_hats[0], "gls").beta_hat
    else:
        ests = yl_estimates_all_areas(ds, _ADJ_NAME[method], z)
        a_hats = [e.a_hat for e in ests]
        beta = fit_regression_mixed(ds, a_hats).beta_hat
    for i in range(ds.m):
        a_hat = a_hats[i]
        eb = eb_estimate(ds, i, a_hat, beta)
        if method == "yl-gls":
            mse_txt = _fmt(mse_estimate(ds, i, a_hat, z).total)
        else:
            mse_txt = ""
        lines.append(
            f"{ds.area_ids[i]},{_fmt(ds.y[i])},{_fmt(ds.D[i])},{_fmt(eb.theta_eb)},"
            f"{_fmt(eb.shrinkage)},{_fmt(a_hat)},{_fmt(eb.sigma)},{mse_txt}"
        )
    _emit("\n".join(lines) + "\n", out)


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--method", default="cox-yl-gls", type=click.Choice(INTERVAL_METHODS))
@click.option("--alpha", default=0.05, type=float, show_default=True)
@click.option("--B", "n_boot", default=500, type=int, show_default=True,
              help="Bootstrap replicates (cll-bootstrap only).")
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--out", default=None, help="Output CSV path (default: stdout).")
@handle_errors
def interval(data, method, alpha, n_boot, seed, out):
    """Per-area intervals: area,lower,upper,length,method."""
    ds = load_csv(data)
    cox_name = {
        "cox-reml": "reml", "cox-anova": "anova", "cox-ll": "li-lahiri",
        "cox-yl-gls": "yl-gls", "cox-yl-ols": "yl-ols",
    }
    if method == "direct":
        results = [
            direct_interval(float(ds.y[i]), float(ds.D[i]), alpha, ds.area_ids[i])
            for i in range(ds.m)
        ]
    elif method == "cll-bootstrap":
        results = [
            bootstrap_interval(ds, i, n_boot, alpha=alpha, seed=seed)
            for i in range(ds.m)
        ]
    else:
        results = cox_intervals_all_areas(ds, cox_name[method], alpha)
    lines = ["area,lower,upper,length,method"]
    for res in results:
        lines.append(
            f"{res.area},{_fmt(res.lower)},{_fmt(res.upper)},"
            f"{_fmt(res.length)},{res.method}"
        )
    _emit("\n".join(lines) + "\n", out)


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--method", default="yl-gls",
              type=click.Choice(("reml", "ll", "yl-gls", "yl-ols")))
@click.option("--alpha", default=0.05, type=float, show_default=True)
@click.option("--A", "a_override", default=None, type=float,
              help="Evaluate the expansion at this A instead of the estimate.")
@click.option("--out", default=None)
@handle_errors
def diagnose(data, method, alpha, a_override, out):
    """Coverage-expansion diagnostics: area,A_used,a_i,b_i,predicted_coverage."""
    ds = load_csv(data)
    z = stats.z_value(alpha)
    lines = ["area,A_used,a_i,b_i,predicted_coverage"]
    shared = None
    if a_override is not None:
        shared = a_override
    elif method in ("reml", "ll"):
        shared = estimate_variance(ds, AdjustmentFactor(_ADJ_NAME[method])).a_hat
    for i in range(ds.m):
        if method in ("yl-gls", "yl-ols"):
            adj = AdjustmentFactor(_ADJ_NAME[method], i, z)
            a_used = shared if shared is not None else estimate_variance(ds, adj).a_hat
        else:
            adj = AdjustmentFactor(_ADJ_NAME[method])
            a_used = shared
        exp = expansion(ds, i, a_used, alpha, adj)
        lines.append(
            f"{ds.area_ids[i]},{_fmt(a_used)},{_fmt(exp.a_i)},{_fmt(exp.b_i)},"
            f"{_fmt(exp.predicted_coverage)}"
        )
    _emit("\n".join(lines) + "\n", out)


def _parse_config(path):
    opts = {}
    with open(path, encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FhciInputError(f"{path}:{ln}: expected key=value")
            key, val = line.split("=", 1)
            opts[key.strip()] = val.strip()
    return opts


@main.command()
@click.option("--pattern", default=None,
              help="Design preset: a, b or lev-<q1>-<D1>.")
@click.option("--config", default=None, type=click.Path(exists=True, dir_okay=False),
              help="key=value file; CLI flags override it.")
@click.option("--R", "n_rep", default=None, type=int, help="Replicates [2000].")
@click.option("--B", "n_boot", default=None, type=int, help="Bootstrap size [500].")
@click.option("--alpha", default=None, type=float)
@click.option("--seed", default=None, type=int)
@click.option("--methods", default=None,
              help="Comma-separated subset of: " + ",".join(ALL_METHODS))
@click.option("--threads", default=None, type=int,
              help="Worker threads (default: all cores, or FH_THREADS).")
@click.option("--out", default="fh_sim", show_default=True,
              help="Output prefix; writes <out>.csv and <out>.txt.")
@handle_errors
def simulate(pattern, config, n_rep, n_boot, alpha, seed, methods, threads, out):
    """Monte Carlo coverage/length study; prints the text table."""
    opts = _parse_config(config) if config else {}
    if pattern is None:
        pattern = opts.get("pattern")
    if pattern is None:
        raise FhciInputError("a design pattern is required (--pattern or config)")
    kwargs = {}
    kwargs["R"] = n_rep if n_rep is not None else int(opts.get("R", 2000))
    kwargs["B"] = n_boot if n_boot is not None else int(opts.get("B", 500))
    kwargs["alpha"] = alpha if alpha is not None else float(opts.get("alpha", 0.05))
    kwargs["seed"] = seed if seed is not None else int(opts.get("seed", 1))
    raw_methods = methods if methods is not None else opts.get("methods")
    if raw_methods:
        kwargs["methods"] = tuple(t.strip() for t in raw_methods.split(",") if t.strip())
    if threads is None:
        env = os.environ.get("FH_THREADS")
        threads = int(env) if env else None
    design = design_from_pattern(pattern, **kwargs)
    report = run_simulation(design, threads=threads)
    with open(f"{out}.csv", "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    table = report.to_text()
    with open(f"{out}.txt", "w", encoding="utf-8") as fh:
        fh.write(table)
    click.echo(table, nl=False)
    click.echo(f"[backend={_backend.backend_name()}] wrote {out}.csv and {out}.txt", err=True)


if __name__ == "__main__":
    main()
