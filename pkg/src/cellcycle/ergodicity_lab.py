"""Invariant-measure estimation, mixing curves and geometric-rate fits."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .chain_sim import EmpiricalMeasure, _rng, iterate, lyapunov_moment, pushforward, resample_equal
from .errors import AssumptionViolation, InsufficientSignal, PreconditionError, StationarityWarning
from .fitting import RateFit, loglinear_fit
from .fm_metric import DEFAULT_CAP, fm_distance_capped
from .model_core import ModelSpec, Probe, as_points, audit_assumptions

__all__ = [
    "InvariantEstimate",
    "MixingCurve",
    "RateFit",
    "bootstrap_se",
    "estimate_invariant",
    "fit_rate",
    "mixing_curve",
    "rate_constant_factor",
    "self_distance",
]


def bootstrap_se(samples, stat, n_boot: int = 200, rng=None) -> float:
    """Bootstrap standard error of ``stat`` over the leading axis of ``samples``."""
    rng = _rng(rng)
    samples = np.asarray(samples)
    n = len(samples)
    vals = np.array([stat(samples[rng.integers(0, n, n)]) for _ in range(n_boot)])
    return float(vals.std(ddof=1))


def self_distance(mu: EmpiricalMeasure, cap: int = DEFAULT_CAP) -> float:
    """FM distance between the even- and odd-indexed halves of an equal-weight cloud."""
    pts = mu.points
    return fm_distance_capped(EmpiricalMeasure.uniform(pts[0::2]), EmpiricalMeasure.uniform(pts[1::2]), cap=cap)


@dataclass
class InvariantEstimate:
    measure: EmpiricalMeasure
    halves_distance: float
    noise_floor: float
    stationary: bool

    @property
    def samples(self) -> np.ndarray:
        return self.measure.points

    def mean(self):
        return self.measure.mean()

    def var(self):
        return self.measure.var()


def _require_contraction(spec: ModelSpec):
    audit = audit_assumptions(spec, Probe())
    if not audit.Lambda1 < 1:
        raise AssumptionViolation(f"Lambda1 = {audit.Lambda1:.6g} >= 1: no invariant measure guaranteed")
    return audit


def estimate_invariant(
    spec: ModelSpec,
    burn_in: int = 1000,
    n_samples: int = 10_000,
    thin: int = 1,
    rng=None,
    x0=None,
    n_boot: int = 8,
    cap: int = DEFAULT_CAP,
) -> InvariantEstimate:
    """Long single-chain estimate of the invariant measure.

    The first and second halves of the thinned sample are compared in FM
    distance against a bootstrap noise level (mean distance between pairs of
    half-size bootstrap resamples); a gap beyond twice that level triggers a
    :class:`StationarityWarning` and ``stationary=False``.
    """
    _require_contraction(spec)
    if n_samples < 2 or thin < 1 or burn_in < 0:
        raise PreconditionError("need n_samples >= 2, thin >= 1, burn_in >= 0")
    rng = _rng(rng)
    x = as_points(spec.x_bar if x0 is None else x0, spec.dim)[:1]
    total = burn_in + n_samples * thin
    keep = []
    pos = 0
    for states, _, _ in iterate(spec, x, total, rng):
        idx = np.arange(pos + 1, pos + 1 + len(states))
        sel = (idx > burn_in) & ((idx - burn_in) % thin == 0)
        keep.append(states[sel, 0])
        pos += len(states)
    samples = np.concatenate(keep)
    mu = EmpiricalMeasure.uniform(samples)
    half = n_samples // 2
    halves = fm_distance_capped(EmpiricalMeasure.uniform(samples[:half]), EmpiricalMeasure.uniform(samples[half:]), cap=cap)
    boots = []
    for _ in range(n_boot):
        a = samples[rng.integers(0, n_samples, half)]
        b = samples[rng.integers(0, n_samples, n_samples - half)]
        boots.append(fm_distance_capped(EmpiricalMeasure.uniform(a), EmpiricalMeasure.uniform(b), cap=cap))
    floor = float(np.mean(boots))
    stationary = halves < 2 * floor
    if not stationary:
        warnings.warn(f"halves differ by {halves:.4g} > 2 x noise {floor:.4g}", StationarityWarning, stacklevel=2)
    return InvariantEstimate(mu, halves, floor, stationary)


@dataclass
class MixingCurve:
    n: np.ndarray
    distance: np.ndarray
    noise_floor: float
    floor_series: np.ndarray

    def __iter__(self):
        return iter(zip(self.n.tolist(), self.distance.tolist()))

    def __len__(self):
        return len(self.n)


def mixing_curve(
    spec: ModelSpec,
    mu1: EmpiricalMeasure,
    mu2: EmpiricalMeasure,
    n_max: int,
    particles: int = 10_000,
    rng=None,
    cap: int = DEFAULT_CAP,
) -> MixingCurve:
    """``||P^n mu1 - P^n mu2||_L`` for ``n = 1..n_max`` from one particle sweep.

    Each cloud holds ``particles`` equal-weight particles; FM solves use
    stratified subsamples of ``cap // 2`` points per cloud.  The noise floor is
    the median self-distance of the ``mu1`` cloud over the sweep.
    """
    if n_max > 200 or n_max < 1:
        raise PreconditionError("need 1 <= n_max <= 200")
    rng = _rng(rng)
    a = resample_equal(mu1, particles, rng)
    b = resample_equal(mu2, particles, rng)
    ns, ds, floors = [], [], []
    for n in range(1, n_max + 1):
        a = pushforward(spec, a, 1, rng=rng)
        b = pushforward(spec, b, 1, rng=rng)
        ns.append(n)
        ds.append(fm_distance_capped(a, b, cap=cap))
        floors.append(self_distance(a, cap))
    floors = np.array(floors)
    return MixingCurve(np.array(ns), np.array(ds), float(np.median(floors)), floors)


def fit_rate(curve, noise_floor: Optional[float] = None, ceiling: float = 1.9, min_points: int = 5) -> RateFit:
    """Fit ``d_n = C q**n`` on the window above ``3 * noise_floor``.

    The window starts at the first point below ``ceiling`` (the FM distance
    saturates at 2) and ends before the first point that drops under three
    times the noise floor.
    """
    if isinstance(curve, MixingCurve):
        if noise_floor is None:
            noise_floor = curve.noise_floor
        pts = list(curve)
    else:
        pts = list(curve)
    noise_floor = noise_floor or 0.0
    n = np.array([p[0] for p in pts], dtype=float)
    d = np.array([p[1] for p in pts], dtype=float)
    start = np.flatnonzero(d < ceiling)
    if start.size == 0:
        raise InsufficientSignal("every point sits at the saturation ceiling")
    i0 = start[0]
    low = np.flatnonzero((d[i0:] <= 3 * noise_floor) | (d[i0:] <= 0))
    i1 = i0 + (low[0] if low.size else len(d) - i0)
    if i1 - i0 < min_points:
        raise InsufficientSignal(f"only {i1 - i0} points above 3 x noise floor {noise_floor:.3g}")
    return loglinear_fit(n[i0:i1], d[i0:i1], min_points)


def rate_constant_factor(spec: ModelSpec, mu: EmpiricalMeasure, mu_star: EmpiricalMeasure) -> float:
    """``1 + <V, mu> + <V, mu_*>``: the measure-dependent factor multiplying the proof constant."""
    return 1.0 + lyapunov_moment(spec, mu, 1) + lyapunov_moment(spec, mu_star, 1)


def second_moment_bound(c: float, Lambda2: float) -> float:
    """Upper bound ``c^2 (1 - sqrt(Lambda2))^-2`` on ``<V^2, mu_*>``."""
    return c**2 / (1.0 - np.sqrt(Lambda2)) ** 2
