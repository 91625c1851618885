"""Compensated-summation kernels for exact enumeration.

Every reduction goes through :func:`math.fsum`, which is correctly rounded,
so results do not depend on the order in which states are visited.
"""

from __future__ import annotations

import math

import numpy as np


def fsum(values) -> float:
    return math.fsum(np.asarray(values, dtype=np.float64).ravel())


def logsumexp(a) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    top = a.max() if a.size else -math.inf
    if not math.isfinite(top):
        return top
    return top + math.log(math.fsum(np.exp(a - top)))


def logsumexp_rows(table) -> np.ndarray:
    """log sum_j exp(table[i, j]) for each row i."""
    table = np.asarray(table, dtype=np.float64)
    return np.array([logsumexp(row) for row in table])


def conditional_rows(table) -> np.ndarray:
    """Normalize each row of a log table into a conditional distribution."""
    norm = logsumexp_rows(table)
    with np.errstate(invalid="ignore"):
        out = table - norm[:, None]
    out[~np.isfinite(norm)] = -np.inf
    return out


def push_forward(r: np.ndarray, log_cond: np.ndarray) -> np.ndarray:
    """sum_i r_i * exp(log_cond[i, j]) for each j, by exact column sums."""
    cond = np.exp(log_cond)
    active = r > 0
    prod = r[active, None] * cond[active]
    return np.array([math.fsum(col) for col in prod.T])


def log_push_down(log_cond_below: np.ndarray, log_above: np.ndarray) -> np.ndarray:
    """log sum_j exp(log_cond_below[i, j] + log_above[j]) for each i."""
    return logsumexp_rows(log_cond_below + log_above[None, :])


def expectation(r: np.ndarray, values: np.ndarray) -> float:
    """sum_i r_i values_i over the support of r (so 0 * -inf counts as 0)."""
    active = r > 0
    return math.fsum(r[active] * values[active])


def empirical(indices: np.ndarray, weights: np.ndarray, n_states: int) -> np.ndarray:
    """Distribution over states from weighted row indices, summed exactly."""
    p = np.zeros(n_states)
    order = np.argsort(indices, kind="stable")
    idx, w = indices[order], weights[order]
    bounds = np.flatnonzero(np.diff(idx)) + 1
    total = math.fsum(w)
    for block_idx, block_w in zip(np.split(idx, bounds), np.split(w, bounds)):
        if block_idx.size:
            p[block_idx[0]] = math.fsum(block_w) / total
    return p
