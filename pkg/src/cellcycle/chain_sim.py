"""Simulation of the homogeneous chain, the frozen-noise auxiliary chain and
push-forwards of particle measures."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Optional

import numpy as np

from . import kernels
from .errors import (
    EnvelopeViolation,
    MaxTrialsExceeded,
    NoiseOutOfBall,
    PreconditionError,
    StateEscape,
)
from .model_core import ModelSpec, Probe, as_points, audit_assumptions

MAX_TRIALS = 1_000_000
_BLOCK = 4096


@dataclass
class EmpiricalMeasure:
    """Weighted particle cloud; ``points`` has shape ``(n, dim)``."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        self.points = pts.reshape(-1, 1) if pts.ndim == 1 else pts
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if len(self.weights) != len(self.points):
            raise ValueError("points and weights differ in length")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) >= 1e-12:
            raise ValueError(f"weights sum to {self.weights.sum()!r}, not 1")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("points must be finite")

    @classmethod
    def uniform(cls, points, dim: Optional[int] = None) -> "EmpiricalMeasure":
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1) if dim in (None, 1) else pts.reshape(1, -1)
        n = len(pts)
        w = np.full(n, 1.0 / n)
        w[-1] = 1.0 - w[:-1].sum()
        return cls(pts, w)

    @classmethod
    def dirac(cls, x, dim: int = 1) -> "EmpiricalMeasure":
        return cls(as_points(x, dim)[:1], np.ones(1))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return len(self.points)

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def var(self) -> np.ndarray:
        m = self.mean()
        return self.weights @ (self.points - m) ** 2


@dataclass
class Trajectory:
    states: np.ndarray  # (N+1, dim)
    times: np.ndarray  # (N,)
    noises: np.ndarray  # (N, dim)
    seed: Optional[int] = None

    def __post_init__(self):
        if not (len(self.states) == len(self.times) + 1 == len(self.noises) + 1):
            raise ValueError("states must have one more entry than times and noises")

    def __len__(self):
        return len(self.times)


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _seed_of(rng):
    return int(rng) if isinstance(rng, (int, np.integer)) else None


@lru_cache(maxsize=64)
def _audited_envelope(spec: ModelSpec) -> float:
    return audit_assumptions(spec, Probe()).M2


def envelope(spec: ModelSpec) -> float:
    """Upper bound M2 on p used by the rejection sampler."""
    if spec.p_max is not None:
        return float(spec.p_max)
    return float(spec.analytic.get("M2", _audited_envelope(spec)))


def _rejection(rng, n, T, M2, density, max_trials=MAX_TRIALS):
    """Draw ``n`` times from unnormalized ``density(idx, t)`` <= M2 on [0, T].

    ``density`` receives the indices still pending and proposals for them.
    Proposals are drawn in rounds for all pending indices (t first, then u),
    which fixes the random-number consumption order.
    """
    out = np.empty(n)
    pending = np.arange(n)
    trials = 0
    while pending.size:
        k = pending.size
        t = rng.uniform(0.0, T, size=k)
        u = rng.random(k)
        d = density(pending, t)
        if np.any(d > M2 * (1 + 1e-9)):
            raise EnvelopeViolation(f"density {float(np.max(d)):.6g} exceeds envelope {M2:.6g}")
        acc = u * M2 <= d
        out[pending[acc]] = t[acc]
        pending = pending[~acc]
        trials += 1
        if trials > max_trials:
            raise MaxTrialsExceeded(f"{pending.size} draws still pending after {max_trials} rounds")
    return out


def _inverse_cdf(rng, n, dens_rows, T, n_grid=2049, chunk=512):
    """Inverse-CDF draws from tabulated rows ``dens_rows(idx, t_grid) -> (len(idx), n_grid)``."""
    tg = np.linspace(0.0, T, n_grid)
    dt = np.diff(tg)
    u = rng.random(n)
    out = np.empty(n)
    for lo in range(0, n, chunk):
        idx = np.arange(lo, min(n, lo + chunk))
        rows = np.clip(dens_rows(idx, tg), 0.0, None)
        cdf = np.cumsum(0.5 * (rows[:, 1:] + rows[:, :-1]) * dt, axis=1)
        cdf /= cdf[:, -1:]
        target = u[idx, None]
        j = np.minimum((cdf < target).sum(axis=1), n_grid - 2)  # cell index
        r = np.arange(len(idx))
        c_hi = cdf[r, j]
        c_lo = np.where(j > 0, cdf[r, np.maximum(j - 1, 0)], 0.0)
        frac = np.where(c_hi > c_lo, (u[idx] - c_lo) / np.where(c_hi > c_lo, c_hi - c_lo, 1.0), 0.0)
        out[idx] = tg[j] + np.clip(frac, 0.0, 1.0) * dt[j]
    return out


def sample_division_time(spec: ModelSpec, x, rng, method: str = "rejection") -> np.ndarray:
    """Draw one division time per point in ``x`` from the density ``p(x, .)``.

    ``method='inverse'`` tabulates the CDF by quadrature instead; use it for
    sharply peaked densities where the envelope is a poor fit.
    """
    rng = _rng(rng)
    pts = as_points(x, spec.dim)
    if method == "inverse":
        def rows(idx, tg):
            X = np.repeat(pts[idx], len(tg), axis=0)
            return spec.p(X, np.tile(tg, len(idx))).reshape(len(idx), len(tg))

        return _inverse_cdf(rng, len(pts), rows, spec.T)
    if method != "rejection":
        raise ValueError(f"unknown sampling method {method!r}")
    M2 = envelope(spec)
    return _rejection(rng, len(pts), spec.T, M2, lambda idx, t: spec.p(pts[idx], t))


def _check_inside(spec, pts, step=None):
    if spec.state_constraint is not None:
        ok = np.asarray(spec.state_constraint(pts), dtype=bool)
        if not np.all(ok):
            bad = pts[np.argmin(ok)]
            raise StateEscape(f"state {bad.tolist()} left X" + (f" at step {step}" if step is not None else ""), step)


def step(spec: ModelSpec, x, rng):
    """One transition of the chain for each point of ``x``.

    Returns ``(x_next, t, h)``; shapes ``(n, dim)``, ``(n,)``, ``(n, dim)``.
    """
    rng = _rng(rng)
    pts = as_points(x, spec.dim)
    t = sample_division_time(spec, pts, rng)
    h = spec.noise(rng, len(pts))
    x_next = np.asarray(spec.S(pts, t), dtype=float) + h
    _check_inside(spec, x_next)
    return x_next, t, h


def _affine_block(spec: ModelSpec, x0: np.ndarray, t: np.ndarray, h: np.ndarray) -> np.ndarray:
    """States after each of the steps given by ``t`` (k, r) and ``h`` (k, r, dim)."""
    form = spec.affine
    offs = form.offset(t) + h
    if form.coef is not None:
        return kernels.scan_scalar(form.coef(t), offs[..., 0], x0[:, 0])[..., None]
    return kernels.scan_matrix(form.matrix, offs, x0)


def _fast_path(spec: ModelSpec) -> bool:
    return spec.p_state_free and spec.affine is not None


def iterate(spec: ModelSpec, x0, n: int, rng, block: int = _BLOCK, record: bool = True) -> Iterator:
    """Advance a batch of independent chains ``n`` steps, yielding blocks.

    Each yielded item is ``(states, times, noises)`` with shapes
    ``(k, r, dim)``, ``(k, r)``, ``(k, r, dim)`` for the next ``k`` steps.
    Models with state-free ``p`` and an affine ``S`` draw a whole block of
    times and noises up front and run the compiled recursion.
    """
    rng = _rng(rng)
    x = as_points(x0, spec.dim).copy()
    r = len(x)
    done = 0
    fast = _fast_path(spec)
    M2 = envelope(spec)
    # bound the block to ~4M stored values
    block = max(1, min(block, (1 << 22) // max(1, r * spec.dim)))
    while done < n:
        k = min(block, n - done)
        if fast:
            t = _rejection(rng, k * r, spec.T, M2, lambda idx, tt: spec.p(np.broadcast_to(x[:1], (len(tt), spec.dim)), tt)).reshape(k, r)
            h = spec.noise(rng, k * r).reshape(k, r, spec.dim)
            states = _affine_block(spec, x, t, h)
            if spec.state_constraint is not None:
                for i in range(k):
                    _check_inside(spec, states[i], done + i + 1)
        else:
            states = np.empty((k, r, spec.dim))
            t = np.empty((k, r))
            h = np.empty((k, r, spec.dim))
            cur = x
            for i in range(k):
                try:
                    cur, t[i], h[i] = step(spec, cur, rng)
                except StateEscape as exc:
                    raise StateEscape(f"{exc} (step {done + i + 1})", done + i + 1) from None
                states[i] = cur
        x = states[-1]
        done += k
        yield states, t, h


def simulate(spec: ModelSpec, x0, n: int, rng=None) -> Trajectory:
    """Simulate a single trajectory of ``n`` steps from ``x0``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    seed = _seed_of(rng)
    g = _rng(rng)
    x0 = as_points(x0, spec.dim)[:1]
    if spec.state_constraint is not None and not spec.contains(x0)[0]:
        raise PreconditionError("x0 lies outside X")
    states, times, noises = [x0], [], []
    for s, t, h in iterate(spec, x0, n, g):
        states.append(s[:, 0])
        times.append(t[:, 0])
        noises.append(h[:, 0])
    return Trajectory(
        np.concatenate(states),
        np.concatenate(times) if times else np.empty(0),
        np.concatenate(noises) if noises else np.empty((0, spec.dim)),
        seed,
    )


def simulate_many(spec: ModelSpec, x0, n: int, rng=None) -> np.ndarray:
    """States of independent chains started at the rows of ``x0``; shape ``(n+1, r, dim)``."""
    g = _rng(rng)
    x0 = as_points(x0, spec.dim)
    out = [x0[None]]
    for s, _, _ in iterate(spec, x0, n, g):
        out.append(s)
    return np.concatenate(out)


def simulate_auxiliary(spec: ModelSpec, x0, noise_seq, rng=None) -> Trajectory:
    """Inhomogeneous chain with a frozen noise sequence: x_{n+1} = S(x_n, t_{n+1}) + h_{n+1}."""
    seed = _seed_of(rng)
    g = _rng(rng)
    hs = np.asarray(noise_seq, dtype=float).reshape(-1, spec.dim)
    norms = np.linalg.norm(hs, axis=1)
    if np.any(norms > spec.eps * (1 + 1e-12) + 1e-15):
        raise NoiseOutOfBall(f"noise of norm {norms.max():.6g} exceeds eps = {spec.eps}")
    x = as_points(x0, spec.dim)[:1]
    states, times = [x], []
    for i, h in enumerate(hs):
        t = sample_division_time(spec, x, g)
        x = np.asarray(spec.S(x, t), dtype=float) + h[None, :]
        _check_inside(spec, x, i + 1)
        states.append(x)
        times.append(t)
    return Trajectory(
        np.concatenate(states),
        np.concatenate(times) if times else np.empty(0),
        hs.copy(),
        seed,
    )


def replicate(mu: EmpiricalMeasure, copies: int) -> EmpiricalMeasure:
    """Repeat every particle ``copies`` times, dividing its weight accordingly."""
    pts = np.repeat(mu.points, copies, axis=0)
    w = np.repeat(mu.weights / copies, copies)
    w /= w.sum()
    return EmpiricalMeasure(pts, w)


def resample_equal(mu: EmpiricalMeasure, n: int, rng) -> EmpiricalMeasure:
    """Systematic resampling to ``n`` equally weighted particles."""
    rng = _rng(rng)
    cdf = np.cumsum(mu.weights)
    cdf[-1] = 1.0
    u = (rng.random() + np.arange(n)) / n
    idx = np.searchsorted(cdf, u, side="right")
    return EmpiricalMeasure.uniform(mu.points[np.minimum(idx, len(cdf) - 1)])


def pushforward(spec: ModelSpec, mu: EmpiricalMeasure, n: int, resample: int = 1, rng=None) -> EmpiricalMeasure:
    """Particle approximation of P^n mu: replicate, then advance every particle n steps."""
    g = _rng(rng)
    rep = replicate(mu, resample) if resample > 1 else mu
    x = rep.points
    for s, _, _ in iterate(spec, x, n, g):
        x = s[-1]
    return EmpiricalMeasure(x, rep.weights.copy())


def lyapunov_moment(spec: ModelSpec, mu: EmpiricalMeasure, j: float) -> float:
    """<V^j, mu> with V(x) = rho(x, x_bar)."""
    return float(mu.weights @ spec.V(mu.points) ** j)


def moment_bound(Lambda_j: float, c: float, j: float, moment0: float, n: int) -> float:
    """Right-hand side ((Lambda_j^n <V^j,mu>)^{1/j} + c/(1 - Lambda_j^{1/j}))^j."""
    return ((Lambda_j**n * moment0) ** (1.0 / j) + c / (1.0 - Lambda_j ** (1.0 / j))) ** j


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------


def trajectory_rows(traj: Trajectory):
    dim = traj.states.shape[1]
    header = ["index"] + [f"x{k}" for k in range(dim)] + ["t"] + [f"h{k}" for k in range(dim)]
    rows = []
    for i, x in enumerate(traj.states):
        if i == 0:
            tail = [""] * (1 + dim)
        else:
            tail = [repr(float(traj.times[i - 1]))] + [repr(float(v)) for v in traj.noises[i - 1]]
        rows.append([str(i)] + [repr(float(v)) for v in x] + tail)
    return header, rows


def measure_rows(mu: EmpiricalMeasure):
    header = ["index"] + [f"x{k}" for k in range(mu.dim)] + ["weight"]
    rows = [[str(i)] + [repr(float(v)) for v in x] + [repr(float(w))] for i, (x, w) in enumerate(zip(mu.points, mu.weights))]
    return header, rows


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def read_measure_csv(path) -> EmpiricalMeasure:
    """Read a particle file with columns ``x0, x1, ...`` and optional ``weight``.

    Lines starting with ``#`` are ignored.
    """
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    cols = [c for c in (reader.fieldnames or []) if c.startswith("x") and c[1:].isdigit()]
    if not cols:
        raise ValueError(f"{path}: no x0, x1, ... columns")
    cols.sort(key=lambda c: int(c[1:]))
    pts, ws = [], []
    for row in reader:
        pts.append([float(row[c]) for c in cols])
        if "weight" in row and row["weight"] not in (None, ""):
            ws.append(float(row["weight"]))
    pts = np.array(pts, dtype=float).reshape(-1, len(cols))
    if ws:
        w = np.array(ws)
        return EmpiricalMeasure(pts, w / w.sum())
    return EmpiricalMeasure.uniform(pts)
