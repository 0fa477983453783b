"""Shared fixtures and independent oracles.

The oracle functions build the m x m projection P explicitly with
numpy, on purpose: they stay independent of the kernel code paths they
are used to check.
"""

import numpy as np
import pytest

from fhci import FayHerriotDataset

Z95 = 1.959963984540054


def oracle_projection(D, X, A):
    V = np.diag(A + np.asarray(D, float))
    Vi = np.linalg.inv(V)
    G = X.T @ Vi @ X
    return Vi - Vi @ X @ np.linalg.inv(G) @ X.T @ Vi


def oracle_reml_loglik(y, D, X, A):
    V = np.diag(A + np.asarray(D, float))
    Vi = np.linalg.inv(V)
    G = X.T @ Vi @ X
    P = oracle_projection(D, X, A)
    return float(
        -0.5 * np.log(np.linalg.det(G))
        - 0.5 * np.log(np.linalg.det(V))
        - 0.5 * y @ P @ y
    )


def oracle_reml_score(y, D, X, A):
    P = oracle_projection(D, X, A)
    return float(0.5 * (y @ P @ P @ y - np.trace(P)))


def make_dataset(y, D, X, ids=None):
    y = np.asarray(y, float)
    m = len(y)
    ids = ids or tuple(str(i + 1) for i in range(m))
    return FayHerriotDataset(tuple(ids), y, np.asarray(D, float), np.asarray(X, float))


def random_dataset(rng, m=None, p=None, d_low=0.2, d_high=3.0):
    m = m if m is not None else int(rng.integers(12, 45))
    p = p if p is not None else int(rng.integers(1, 4))
    cols = [np.ones(m)]
    for _ in range(p - 1):
        cols.append(rng.normal(size=m))
    X = np.column_stack(cols)
    D = rng.uniform(d_low, d_high, m)
    A = float(rng.uniform(0.3, 2.0))
    y = X @ rng.normal(size=p) + rng.normal(0, np.sqrt(A), m) + rng.normal(
        0, np.sqrt(D), m
    )
    return make_dataset(y, D, X)


@pytest.fixture
def balanced15():
    rng = np.random.default_rng(20240612)
    y = rng.normal(0.0, np.sqrt(1.7), 15)
    return make_dataset(y, np.full(15, 0.7), np.ones((15, 1)))


@pytest.fixture
def unbalanced():
    rng = np.random.default_rng(77)
    m = 20
    X = np.column_stack([np.ones(m), rng.normal(size=m)])
    D = rng.uniform(0.3, 2.5, m)
    y = rng.normal(0, 1.2, m)
    return make_dataset(y, D, X)
