"""Fortet-Mourier (bounded-Lipschitz) distance between empirical measures.

The distance is the value of the linear program

    max  sum_i f_i c_i
    s.t. |f_i - f_j| <= rho(z_i, z_j),  -1 <= f_i <= 1,

over the merged support ``z`` with signed weights ``c = w1 - w2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from . import kernels
from .chain_sim import EmpiricalMeasure
from .errors import DegenerateMetric, SupportTooLarge
from .model_core import euclidean

DEFAULT_CAP = 4096


@dataclass
class FMProblem:
    support: np.ndarray
    signed_weights: np.ndarray
    distances: Optional[np.ndarray]  # None for the 1-d Euclidean chain form


def _merge(mu1: EmpiricalMeasure, mu2: EmpiricalMeasure):
    if mu1.dim != mu2.dim:
        raise ValueError("measures live in different dimensions")
    pts = np.vstack([mu1.points, mu2.points])
    # np.unique sorts rows: the support order is independent of argument order
    support, inv = np.unique(pts, axis=0, return_inverse=True)
    inv = np.asarray(inv).ravel()
    # one subtraction per point keeps c(mu2, mu1) == -c(mu1, mu2) bit for bit
    c1 = np.bincount(inv[: len(mu1)], weights=mu1.weights, minlength=len(support))
    c2 = np.bincount(inv[len(mu1):], weights=mu2.weights, minlength=len(support))
    return support, c1 - c2


def pairwise(points: np.ndarray, metric: Callable = euclidean) -> np.ndarray:
    m = len(points)
    iu, ju = np.triu_indices(m, k=1)
    D = np.zeros((m, m))
    if m > 1:
        d = np.asarray(metric(points[iu], points[ju]), dtype=float)
        D[iu, ju] = d
        D[ju, iu] = d
    return D


def _validate_distances(D: np.ndarray):
    if np.any(np.isnan(D)) or np.any(D < 0):
        raise DegenerateMetric("metric returned negative or NaN distances")
    if len(D) <= 128 and len(D) > 2:
        # d_ij <= d_ik + d_kj
        via = np.min(D[:, :, None] + D[None, :, :], axis=1)
        if np.any(D > via + 1e-9):
            raise DegenerateMetric("metric violates the triangle inequality")


def build_problem(mu1, mu2, metric: Optional[Callable] = None, cap: int = DEFAULT_CAP) -> FMProblem:
    support, c = _merge(mu1, mu2)
    if len(support) > cap:
        raise SupportTooLarge(f"combined support {len(support)} exceeds cap {cap}; subsample first")
    if metric is None and support.shape[1] == 1:
        return FMProblem(support, c, None)
    D = pairwise(support, metric or euclidean)
    _validate_distances(D)
    return FMProblem(support, c, D)


def solve_problem(prob: FMProblem) -> float:
    """Optimal value of the FM linear program for a prepared :class:`FMProblem`."""
    c = prob.signed_weights
    m = len(c)
    if m < 2 or np.all(np.abs(c) < 1e-300):
        return 0.0
    # f -> -f maps the feasible set onto itself, so fix the sign of c
    nz = np.flatnonzero(c)
    if c[nz[0]] < 0:
        c = -c
    if prob.distances is None:
        # points on the line: neighbour constraints imply all pairwise ones
        gaps = np.diff(prob.support[:, 0])
        keep = np.flatnonzero(gaps < 2.0)
        i, j, d = keep, keep + 1, gaps[keep]
    else:
        iu, ju = np.triu_indices(m, k=1)
        d_all = prob.distances[iu, ju]
        # |f_i - f_j| <= 2 holds anyway
        sel = d_all < 2.0
        i, j, d = iu[sel], ju[sel], d_all[sel]
    k = len(d)
    if k:
        rows = np.repeat(np.arange(2 * k), 2)
        # rows 2e: f_i - f_j <= d ; rows 2e+1: f_j - f_i <= d
        cols = np.column_stack([i, j, j, i]).reshape(-1)
        vals = np.tile([1.0, -1.0, 1.0, -1.0], k)
        A = sparse.csr_matrix((vals, (rows, cols)), shape=(2 * k, m))
        b = np.repeat(d, 2)
    else:
        A, b = None, None
    res = linprog(
        -c,
        A_ub=A,
        b_ub=b,
        bounds=(-1.0, 1.0),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:  # pragma: no cover - HiGHS failure
        raise RuntimeError(f"LP solver failed: {res.message}")
    return float(min(2.0, max(0.0, -res.fun)))


def fm_distance(mu1: EmpiricalMeasure, mu2: EmpiricalMeasure, metric: Optional[Callable] = None, cap: int = DEFAULT_CAP) -> float:
    """Exact Fortet-Mourier distance ``||mu1 - mu2||_L``.

    ``metric=None`` means Euclidean.  In one dimension the Euclidean problem is
    solved with neighbour constraints only, which is equivalent to the full
    pairwise system for points on a line.
    """
    return solve_problem(build_problem(mu1, mu2, metric, cap))


def fm_distance_bruteforce(mu1, mu2, metric: Optional[Callable] = None, grid: int = 21, impl=None) -> float:
    """Exhaustive search over f with values on an equispaced grid in [-1, 1].

    With step ``h = 2/(grid-1)`` the grid optimum equals the LP value under
    the truncated distances ``h*floor(d/h)`` (difference constraints are
    totally unimodular).  It is a lower bound on :func:`fm_distance` and lies
    within ``(m-1)*h`` of it for a merged support of ``m`` points.
    """
    support, c = _merge(mu1, mu2)
    if len(support) > 8:
        raise SupportTooLarge("brute force supports at most 8 points")
    if not 2 <= grid <= 21:
        raise ValueError("grid must have between 2 and 21 values")
    D = pairwise(support, metric or euclidean)
    _validate_distances(D)
    vals = np.linspace(-1.0, 1.0, grid)
    if len(c) == 0:
        return 0.0
    best = max(kernels.grid_search(D, c, vals, impl), kernels.grid_search(D, -c, vals, impl))
    return max(0.0, best)


def stratified_subsample(mu: EmpiricalMeasure, k: int) -> EmpiricalMeasure:
    """Deterministic ``k``-point equal-weight quantile subsample.

    Points are ordered lexicographically (first coordinate primary) and the
    ``(j + 1/2)/k`` quantiles of the weight distribution along that order are
    kept.  Returns ``mu`` unchanged when it already has at most ``k`` points.
    """
    if len(mu) <= k:
        return mu
    order = np.lexsort(mu.points.T[::-1])
    cdf = np.cumsum(mu.weights[order])
    cdf[-1] = 1.0
    q = (np.arange(k) + 0.5) / k
    idx = np.minimum(np.searchsorted(cdf, q, side="left"), len(order) - 1)
    return EmpiricalMeasure.uniform(mu.points[order[idx]])


def fm_distance_capped(mu1, mu2, metric: Optional[Callable] = None, cap: int = DEFAULT_CAP) -> float:
    """FM distance after subsampling each measure to ``cap // 2`` points."""
    half = cap // 2
    return fm_distance(stratified_subsample(mu1, half), stratified_subsample(mu2, half), metric, cap)
