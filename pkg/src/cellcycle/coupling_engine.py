"""Coupling of two copies of the chain on X^2 x {0, 1}.

At each step both coordinates share the noise ``h``.  With probability
``beta = int min(p(x,t), p(y,t)) dt`` they also share the division time,
drawn from ``min(p(x,.), p(y,.)) / beta`` (the Q branch, theta = 1).
Otherwise each coordinate draws its own time from the normalized excess
``(p(x,.) - min) / (1 - beta)`` (the product-form residual, theta = 0).
Either way each coordinate moves with its own one-step law.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .chain_sim import _check_inside, _inverse_cdf, _rejection, _rng, envelope, sample_division_time
from .errors import InsufficientSignal, InvalidKappa, PreconditionError
from .fitting import RateFit, loglinear_fit
from .model_core import AssumptionAudit, ModelSpec, Probe, as_points, audit_assumptions, quadrature

UNREACHABLE_GAP = 1e-12
# switch residual sampling to inverse CDF beyond this many expected trials
_MAX_EXPECTED_TRIALS = 50.0


def coupling_mass(spec: ModelSpec, x, y, n_nodes: int = 256) -> np.ndarray:
    """``beta(x, y) = int_0^T min(p(x,t), p(y,t)) dt`` for each pair of rows."""
    X = as_points(x, spec.dim)
    Y = as_points(y, spec.dim)
    if spec.p_state_free:
        return np.ones(max(len(X), len(Y)))
    X, Y = np.broadcast_arrays(X, Y)
    nodes, weights = quadrature(spec.T, n_nodes)
    k, q = len(X), len(nodes)
    t = np.tile(nodes, k)
    px = np.asarray(spec.p(np.repeat(X, q, axis=0), t)).reshape(k, q)
    py = np.asarray(spec.p(np.repeat(Y, q, axis=0), t)).reshape(k, q)
    beta = np.minimum(px, py) @ weights
    return np.clip(beta, 0.0, 1.0)


@dataclass
class CoupledState:
    x: np.ndarray
    y: np.ndarray
    theta: int

    def __post_init__(self):
        if self.theta not in (0, 1):
            raise ValueError("theta must be 0 or 1")


@dataclass
class CoupledBatch:
    """``reps`` coupled runs; arrays are indexed ``[n, replicate, ...]``."""

    xs: np.ndarray  # (N+1, r, dim)
    ys: np.ndarray
    theta: np.ndarray  # (N+1, r) int8, theta[0] = 1
    noises: np.ndarray  # (N, r, dim)
    t_x: np.ndarray  # (N, r)
    t_y: np.ndarray

    @property
    def branch_q(self) -> np.ndarray:
        return self.theta[1:] == 1

    def replicate(self, k: int) -> "CoupledTrajectory":
        return CoupledTrajectory(self.xs[:, k], self.ys[:, k], self.theta[:, k], self.noises[:, k], self.t_x[:, k], self.t_y[:, k])


@dataclass
class CoupledTrajectory:
    xs: np.ndarray  # (N+1, dim)
    ys: np.ndarray
    theta: np.ndarray  # (N+1,)
    noises: np.ndarray  # (N, dim)
    t_x: np.ndarray
    t_y: np.ndarray

    @property
    def states(self):
        return [CoupledState(x, y, int(th)) for x, y, th in zip(self.xs, self.ys, self.theta)]

    @property
    def branch(self):
        return np.where(self.theta[1:] == 1, "Q", "R")


def _excess_times(spec, X, Y, gap, rng, M2):
    """Draw from ``(p(X, .) - min(p(X, .), p(Y, .)))/gap`` for each row."""
    out = np.empty(len(X))
    slow = spec.T * M2 / np.maximum(gap, 1e-300) > _MAX_EXPECTED_TRIALS
    fast_idx = np.flatnonzero(~slow)
    if fast_idx.size:
        Xf, Yf = X[fast_idx], Y[fast_idx]

        def dens(idx, t):
            return np.clip(spec.p(Xf[idx], t) - spec.p(Yf[idx], t), 0.0, None)

        out[fast_idx] = _rejection(rng, fast_idx.size, spec.T, M2, dens)
    slow_idx = np.flatnonzero(slow)
    if slow_idx.size:
        Xs, Ys = X[slow_idx], Y[slow_idx]

        def rows(idx, tg):
            q, k = len(tg), len(idx)
            t = np.tile(tg, k)
            px = spec.p(np.repeat(Xs[idx], q, axis=0), t)
            py = spec.p(np.repeat(Ys[idx], q, axis=0), t)
            return np.clip(px - py, 0.0, None).reshape(k, q)

        out[slow_idx] = _inverse_cdf(rng, slow_idx.size, rows, spec.T)
    return out


def coupled_step_many(spec: ModelSpec, X, Y, rng):
    """One coupled transition for each row pair; returns ``(X', Y', theta, t_x, t_y, h)``."""
    rng = _rng(rng)
    X = as_points(X, spec.dim)
    Y = as_points(Y, spec.dim)
    r = len(X)
    h = spec.noise(rng, r)
    if spec.p_state_free:
        t = sample_division_time(spec, X, rng)
        tx = ty = t
        theta = np.ones(r, dtype=np.int8)
    else:
        M2 = envelope(spec)
        beta = coupling_mass(spec, X, Y)
        gap = 1.0 - beta
        u = rng.random(r)
        coupled = (u < beta) | (gap < UNREACHABLE_GAP)
        tx = np.empty(r)
        ty = np.empty(r)
        ci = np.flatnonzero(coupled)
        if ci.size:
            Xc, Yc = X[ci], Y[ci]
            tc = _rejection(rng, ci.size, spec.T, M2, lambda idx, t: np.minimum(spec.p(Xc[idx], t), spec.p(Yc[idx], t)))
            tx[ci] = tc
            ty[ci] = tc
        ri = np.flatnonzero(~coupled)
        if ri.size:
            tx[ri] = _excess_times(spec, X[ri], Y[ri], gap[ri], rng, M2)
            ty[ri] = _excess_times(spec, Y[ri], X[ri], gap[ri], rng, M2)
        theta = coupled.astype(np.int8)
    Xn = np.asarray(spec.S(X, tx), dtype=float) + h
    Yn = np.asarray(spec.S(Y, ty), dtype=float) + h
    _check_inside(spec, Xn)
    _check_inside(spec, Yn)
    return Xn, Yn, theta, tx, ty, h


def coupled_step(spec: ModelSpec, state: CoupledState, rng) -> CoupledState:
    Xn, Yn, theta, *_ = coupled_step_many(spec, state.x, state.y, rng)
    return CoupledState(Xn[0], Yn[0], int(theta[0]))


def simulate_coupled_many(spec: ModelSpec, x0, y0, n: int, reps: int = 1, rng=None) -> CoupledBatch:
    """``reps`` independent coupled runs of length ``n`` from ``(x0, y0, theta=1)``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = _rng(rng)
    X = np.repeat(as_points(x0, spec.dim)[:1], reps, axis=0)
    Y = np.repeat(as_points(y0, spec.dim)[:1], reps, axis=0)
    if not (spec.contains(X[:1])[0] and spec.contains(Y[:1])[0]):
        raise PreconditionError("starting points must lie in X")
    xs = np.empty((n + 1, reps, spec.dim))
    ys = np.empty_like(xs)
    theta = np.empty((n + 1, reps), dtype=np.int8)
    hs = np.empty((n, reps, spec.dim))
    txs = np.empty((n, reps))
    tys = np.empty((n, reps))
    xs[0], ys[0], theta[0] = X, Y, 1
    for i in range(n):
        X, Y, th, tx, ty, h = coupled_step_many(spec, X, Y, rng)
        xs[i + 1], ys[i + 1], theta[i + 1] = X, Y, th
        hs[i], txs[i], tys[i] = h, tx, ty
    return CoupledBatch(xs, ys, theta, hs, txs, tys)


def simulate_coupled(spec: ModelSpec, x0, y0, n: int, rng=None) -> CoupledTrajectory:
    return simulate_coupled_many(spec, x0, y0, n, 1, rng).replicate(0)


@dataclass
class CouplingDiagnostics:
    kappa: float
    threshold: float  # 2c / kappa
    hit_times: np.ndarray  # inf when K_kappa was not reached within the horizon
    couple_times: np.ndarray  # inf when censored
    censoring_rate: float
    hit_survival: np.ndarray  # P(d > n), n = 0..horizon
    hit_fit: Optional[RateFit]
    q_fit: Optional[RateFit]
    gap_mean: np.ndarray  # E|g(x_n) - g(y_n)|
    gap_se: np.ndarray
    vbar_series: np.ndarray  # E Vbar(x_n, y_n)
    vbar_se: np.ndarray
    full_coupling_fraction: float  # runs with theta = 1 on every step


def _first_true(mask: np.ndarray) -> np.ndarray:
    """Index along axis 0 of the first True, ``inf`` where none."""
    any_ = mask.any(axis=0)
    idx = np.argmax(mask, axis=0).astype(float)
    idx[~any_] = np.inf
    return idx


def coupling_diagnostics(
    spec: ModelSpec,
    x0,
    y0,
    kappa: float,
    horizon: int = 100,
    reps: int = 1000,
    rng=None,
    audit: Optional[AssumptionAudit] = None,
) -> CouplingDiagnostics:
    """Hitting time of K_kappa, horizon-censored coupling time and decay of E|g(x_n)-g(y_n)|."""
    audit = audit or audit_assumptions(spec, Probe())
    if not 0 < kappa < 1 - audit.Lambda1:
        raise InvalidKappa(f"kappa must lie in (0, {1 - audit.Lambda1:.6g})")
    if horizon < 50 or reps < 100:
        raise PreconditionError("need horizon >= 50 and reps >= 100")
    batch = simulate_coupled_many(spec, x0, y0, horizon, reps, rng)
    Vx = spec.V(batch.xs.reshape(-1, spec.dim)).reshape(horizon + 1, reps)
    Vy = spec.V(batch.ys.reshape(-1, spec.dim)).reshape(horizon + 1, reps)
    vbar = Vx + Vy
    threshold = 2 * audit.c / kappa
    hit = _first_true(vbar[1:] < threshold) + 1
    zeros = batch.theta[1:] == 0
    # tau-hat = 1 + last index with theta = 0; censored if that index is the horizon
    last_zero = np.where(zeros.any(axis=0), horizon - np.argmax(zeros[::-1], axis=0), 0)
    tau = (last_zero + 1).astype(float)
    tau[last_zero == horizon] = np.inf
    ns = np.arange(horizon + 1)
    survival = np.array([np.mean(hit > k) for k in ns])
    hit_fit = None
    sel = np.flatnonzero((survival > 0) & (survival < 1) & (ns >= 1))
    if sel.size >= 5:
        hit_fit = loglinear_fit(ns[sel], survival[sel])
    gx = np.minimum(1.0, Vx)
    gy = np.minimum(1.0, Vy)
    diff = np.abs(gx - gy)
    gap_mean = diff.mean(axis=1)
    gap_se = diff.std(axis=1, ddof=1) / np.sqrt(reps)
    q_fit = None
    ok = np.flatnonzero((gap_mean > 10 * gap_se) & (gap_mean > 0) & (ns >= 1))
    if ok.size:
        # contiguous window from the first usable point
        stop = np.flatnonzero(np.diff(ok) > 1)
        ok = ok[: stop[0] + 1] if stop.size else ok
        try:
            q_fit = loglinear_fit(ns[ok], gap_mean[ok])
        except InsufficientSignal:
            q_fit = None
    return CouplingDiagnostics(
        kappa=kappa,
        threshold=threshold,
        hit_times=hit,
        couple_times=tau,
        censoring_rate=float(np.mean(np.isinf(tau))),
        hit_survival=survival,
        hit_fit=hit_fit,
        q_fit=q_fit,
        gap_mean=gap_mean,
        gap_se=gap_se,
        vbar_series=vbar.mean(axis=1),
        vbar_se=vbar.std(axis=1, ddof=1) / np.sqrt(reps),
        full_coupling_fraction=float(np.mean(~zeros.any(axis=0))),
    )


def coupled_rows(batch: CoupledBatch, spec: ModelSpec):
    """Per-replicate CSV rows ``(replicate, n, x..., y..., theta, vbar)``."""
    N1, r, d = batch.xs.shape
    header = ["replicate", "n"] + [f"x{k}" for k in range(d)] + [f"y{k}" for k in range(d)] + ["theta", "vbar"]
    vbar = (spec.V(batch.xs.reshape(-1, d)) + spec.V(batch.ys.reshape(-1, d))).reshape(N1, r)
    rows = []
    for k in range(r):
        for n in range(N1):
            rows.append(
                [str(k), str(n)]
                + [repr(float(v)) for v in batch.xs[n, k]]
                + [repr(float(v)) for v in batch.ys[n, k]]
                + [str(int(batch.theta[n, k])), repr(float(vbar[n, k]))]
            )
    return header, rows
