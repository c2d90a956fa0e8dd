"""Central limit theorem and law of the iterated logarithm experiments.

The corrector ``chi = sum_i U^i g`` turns partial sums of a centered
observable into the martingale ``M_n = chi(x_n) - chi(x_0) + sum_{i<n} g(x_i)``
with increments ``Z_n = chi(x_n) - chi(x_{n-1}) + g(x_{n-1})``.  The limiting
variance is estimated twice: directly as ``Var(S_n)`` under a stationary
start and as ``E Z_1^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import stats

from .chain_sim import EmpiricalMeasure, Trajectory, _rng, iterate, step
from .errors import (
    AssumptionViolation,
    NonCenteredObservable,
    PreconditionError,
    SigmaZero,
    TruncationNotConverged,
)
from .ergodicity_lab import estimate_invariant
from .model_core import ModelSpec, Probe, as_points, audit_assumptions

DEGENERATE_SIGMA2 = 1e-12


@dataclass
class Observable:
    """A real observable ``g`` with its Lipschitz constant and sup bound.

    ``bound`` may be ``inf`` for the unbounded test functions used with the
    affine models.
    """

    g: Callable[[np.ndarray], np.ndarray]
    lipschitz_const: float
    bound: float = math.inf
    centered: bool = False

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.g(x), dtype=float)

    @property
    def G(self) -> float:
        return max(self.lipschitz_const, self.bound)

    def spot_check(self, spec: ModelSpec, pts, n_pairs: int = 200, rng=None) -> None:
        """Check the Lipschitz and sup bounds on random pairs drawn from ``pts``."""
        rng = _rng(rng)
        pts = as_points(pts, spec.dim)
        i = rng.integers(0, len(pts), n_pairs)
        j = rng.integers(0, len(pts), n_pairs)
        gx, gy = self(pts[i]), self(pts[j])
        d = spec.metric(pts[i], pts[j])
        if np.any(np.abs(gx - gy) > self.lipschitz_const * d + 1e-12):
            raise ValueError("observable violates its Lipschitz constant")
        if np.any(np.abs(gx) > self.bound + 1e-12):
            raise ValueError("observable exceeds its bound")


def linear_observable(shift: float = 0.0, coord: int = 0) -> Observable:
    """``g(x) = x[coord] - shift`` (centered when ``shift`` is the stationary mean)."""
    return Observable(lambda x: x[:, coord] - shift, 1.0, math.inf, centered=True)


def zero_observable() -> Observable:
    return Observable(lambda x: np.zeros(len(x)), 0.0, 0.0, centered=True)


def _centering(obs: Observable, mu_star: EmpiricalMeasure):
    vals = obs(mu_star.points)
    mean = float(mu_star.weights @ vals)
    var = float(mu_star.weights @ (vals - mean) ** 2)
    return mean, math.sqrt(var / len(vals))


def check_centered(spec: ModelSpec, obs: Observable, mu_star: EmpiricalMeasure) -> float:
    """Return ``<g, mu_*>``; raise :class:`NonCenteredObservable` beyond 3 standard errors."""
    mean, se = _centering(obs, mu_star)
    if abs(mean) > 3 * se + 1e-12:
        raise NonCenteredObservable(f"<g, mu*> = {mean:.4g} exceeds 3 s.e. = {3 * se:.3g}")
    return mean


# ---------------------------------------------------------------------------
# corrector
# ---------------------------------------------------------------------------


@dataclass
class ChiEstimate:
    value: float
    se: float
    terms: np.ndarray
    term_se: np.ndarray

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    def __float__(self):
        return self.value


def estimate_chi(
    spec: ModelSpec,
    obs: Observable,
    x,
    inner_reps: int = 10_000,
    i_max: int = 200,
    rng=None,
    tol: Optional[float] = None,
    mu_star: Optional[EmpiricalMeasure] = None,
    offset_tol: float = 0.0,
    n_terms: Optional[int] = None,
) -> ChiEstimate:
    """Truncated series ``chi(x) = sum_i E_x g(x_i)``, each term from fresh trajectories.

    A term counts as negligible when ``|term| <= tol + 2 se``; the sum stops
    after three negligible terms in a row.  ``tol`` defaults to
    ``1e-3 (1 + V(x))``.  ``offset_tol`` widens it by the uncertainty of the
    centring constant: the terms tend to ``<g, mu_*>``, which is zero only up
    to the error of the invariant estimate.  That offset shifts chi by a
    constant and cancels in the martingale differences.  ``n_terms`` skips
    the stopping rule and sums exactly that many terms (``g(x)`` included).
    """
    if mu_star is not None:
        check_centered(spec, obs, mu_star)
        if offset_tol == 0.0:
            offset_tol = 3 * _centering(obs, mu_star)[1]
    elif not obs.centered:
        raise NonCenteredObservable("observable is not marked centered and no invariant estimate was given")
    rng = _rng(rng)
    x = as_points(x, spec.dim)[:1]
    if tol is None:
        tol = 1e-3 * (1.0 + float(spec.V(x)[0]))
    terms = [float(obs(x)[0])]
    ses = [0.0]
    run = 0
    start = np.repeat(x, inner_reps, axis=0)
    last = i_max if n_terms is None else n_terms - 1
    for i in range(1, last + 1):
        cur = start
        for states, _, _ in iterate(spec, start, i, rng):
            cur = states[-1]
        vals = obs(cur)
        term = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(inner_reps)) if inner_reps > 1 else 0.0
        terms.append(term)
        ses.append(se)
        run = run + 1 if abs(term) <= tol + offset_tol + 2 * se else 0
        if run == 3 and n_terms is None:
            break
    else:
        if n_terms is None:
            raise TruncationNotConverged(f"terms still above tolerance {tol:.3g} after {i_max} steps")
    terms = np.array(terms)
    ses = np.array(ses)
    return ChiEstimate(float(terms.sum()), float(np.sqrt(np.sum(ses**2))), terms, ses)


@dataclass
class ChiTable:
    """Piecewise-linear interpolant of pointwise chi estimates (1-d models)."""

    grid: np.ndarray
    values: np.ndarray
    ses: np.ndarray
    max_terms: int

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        g, v = self.grid, self.values
        out = np.interp(x, g, v)
        lo, hi = x < g[0], x > g[-1]
        out[lo] = v[0] + (x[lo] - g[0]) * (v[1] - v[0]) / (g[1] - g[0])
        out[hi] = v[-1] + (x[hi] - g[-1]) * (v[-1] - v[-2]) / (g[-1] - g[-2])
        return out


def chi_table(spec: ModelSpec, obs: Observable, grid, inner_reps: int = 20_000, rng=None, i_max: int = 200,
              offset_tol: float = 0.0, common_random_numbers: bool = True) -> ChiTable:
    """Estimate chi on ``grid`` and interpolate.

    With ``common_random_numbers`` every grid point replays the same random
    stream and is summed to the same depth, so differences ``chi(x) - chi(y)``
    (all that enters the martingale increments) carry far less noise than the
    values themselves.
    """
    if spec.dim != 1:
        raise PreconditionError("chi interpolation is implemented for 1-d models only")
    rng = _rng(rng)
    grid = np.sort(np.asarray(grid, dtype=float).ravel())
    seed = int(rng.integers(2**63))

    def stream():
        return np.random.default_rng(seed) if common_random_numbers else rng

    ests = [estimate_chi(spec, obs, [g], inner_reps, i_max, stream(), offset_tol=offset_tol) for g in grid]
    if common_random_numbers:
        # uneven truncation depths would tilt the differences; replay every point to the deepest one
        depth = max(e.n_terms for e in ests)
        ests = [e if e.n_terms == depth else
                estimate_chi(spec, obs, [g], inner_reps, i_max, stream(), offset_tol=offset_tol, n_terms=depth)
                for g, e in zip(grid, ests)]
    return ChiTable(grid, np.array([e.value for e in ests]), np.array([e.se for e in ests]), max(e.n_terms for e in ests))


def chi_growth_constant(spec: ModelSpec, chi, pts) -> float:
    """Smallest K with ``|chi(x) - chi(y)| <= K (1 + V(x) + V(y))`` on all probed pairs."""
    pts = as_points(pts, spec.dim)
    iu, ju = np.triu_indices(len(pts), k=1)
    c = np.asarray(chi(pts[:, 0] if spec.dim == 1 else pts))
    V = spec.V(pts)
    return float(np.max(np.abs(c[iu] - c[ju]) / (1 + V[iu] + V[ju])))


# ---------------------------------------------------------------------------
# martingale
# ---------------------------------------------------------------------------


@dataclass
class MartingaleSeries:
    Z: np.ndarray  # (N,) or (N, r)
    M: np.ndarray  # (N+1,) or (N+1, r), M[0] = 0


def _chi_eval(chi, pts, dim):
    if dim == 1:
        return np.asarray(chi(pts[..., 0].reshape(-1)), dtype=float).reshape(pts.shape[:-1])
    return np.asarray(chi(pts.reshape(-1, dim)), dtype=float).reshape(pts.shape[:-1])


def martingale_differences(spec: ModelSpec, obs: Observable, trajectory, chi) -> MartingaleSeries:
    """``Z_n`` and ``M_n`` along one trajectory (or a batch, states shaped ``(N+1, r, dim)``)."""
    states = trajectory.states if isinstance(trajectory, Trajectory) else np.asarray(trajectory, dtype=float)
    if states.ndim == 1:
        states = states.reshape(-1, 1)
    d = spec.dim
    c = _chi_eval(chi, states, d)
    g = np.asarray(obs(states.reshape(-1, d)), dtype=float).reshape(states.shape[:-1])
    Z = c[1:] - c[:-1] + g[:-1]
    M = np.concatenate([np.zeros((1,) + Z.shape[1:]), np.cumsum(Z, axis=0)])
    return MartingaleSeries(Z, M)


def sigma2_martingale(spec: ModelSpec, obs: Observable, chi, mu_star: EmpiricalMeasure, rng=None, max_points: int = 100_000):
    """``E_{mu*} Z_1^2`` and its standard error."""
    rng = _rng(rng)
    x0 = mu_star.points
    if len(x0) > max_points:
        x0 = x0[rng.choice(len(x0), max_points, replace=False)]
    x1, _, _ = step(spec, x0, rng)
    Z = _chi_eval(chi, x1[:, None, :], spec.dim)[:, 0] - _chi_eval(chi, x0[:, None, :], spec.dim)[:, 0] + obs(x0)
    Z2 = Z**2
    return float(Z2.mean()), float(Z2.std(ddof=1) / math.sqrt(len(Z2)))


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@dataclass
class LimitReport:
    sigma2_direct: Optional[float] = None
    sigma2_martingale: Optional[float] = None
    sigma2_martingale_se: Optional[float] = None
    ks_stat: Optional[float] = None
    ks_pvalue: Optional[float] = None
    ad_stat: Optional[float] = None
    degenerate: bool = False
    lil_endpoint_stats: Optional[dict] = None
    chi_truncation: Optional[dict] = None
    samples: Optional[np.ndarray] = field(default=None, repr=False)

    def summary(self) -> dict:
        out = {}
        for key in ("sigma2_direct", "sigma2_martingale", "sigma2_martingale_se", "ks_stat", "ks_pvalue", "ad_stat", "degenerate"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        if self.chi_truncation:
            out.update({f"chi_{k}": v for k, v in self.chi_truncation.items()})
        if self.lil_endpoint_stats:
            for k, v in self.lil_endpoint_stats.items():
                if np.isscalar(v):
                    out[f"lil_{k}"] = v
        return out


def anderson_darling(x, cdf) -> float:
    """A^2 statistic of ``x`` against a fully specified continuous CDF."""
    x = np.sort(np.asarray(x, dtype=float))
    n = len(x)
    F = np.clip(cdf(x), 1e-300, 1 - 1e-16)
    i = np.arange(1, n + 1)
    return float(-n - np.mean((2 * i - 1) * (np.log(F) + np.log1p(-F[::-1]))))


def _partial_sums(spec, obs, starts, n, rng, checkpoints=None):
    """``sum_{i<n} g(x_i)`` per chain, or the partial sums at each checkpoint."""
    starts = as_points(starts, spec.dim)
    total = obs(starts).astype(float)
    ck = None if checkpoints is None else np.asarray(checkpoints)
    rec = None if ck is None else np.zeros((len(ck), len(starts)))
    if ck is not None:
        rec[ck == 1] = total
    pos = 1  # number of terms in total
    for states, _, _ in iterate(spec, starts, n - 1, rng):
        k, r, d = states.shape
        gv = obs(states.reshape(-1, d)).reshape(k, r)
        if ck is not None:
            csum = total + np.cumsum(gv, axis=0)  # row j holds S_{pos + j + 1}
            sel = np.flatnonzero((ck > pos) & (ck <= pos + k))
            if sel.size:
                rec[sel] = csum[ck[sel] - pos - 1]
            total = csum[-1]
        else:
            total = total + gv.sum(axis=0)
        pos += k
    return total if ck is None else rec


def _default_chi(spec, obs, mu_star, rng, inner_reps=20_000, n_grid=13):
    q = np.quantile(mu_star.points[:, 0], np.linspace(0.005, 0.995, n_grid))
    q = np.unique(q)
    offset = 3 * _centering(obs, mu_star)[1]
    return chi_table(spec, obs, q, inner_reps=inner_reps, rng=rng, offset_tol=offset)


def clt_experiment(
    spec: ModelSpec,
    obs: Observable,
    n: int,
    reps: int,
    rng=None,
    mu_star: Optional[EmpiricalMeasure] = None,
    chi=None,
    mu0: Optional[EmpiricalMeasure] = None,
    chi_reps: int = 20_000,
) -> LimitReport:
    """Draw ``reps`` values of ``S_n = (g(x_0) + ... + g(x_{n-1})) / sqrt(n)`` and test normality.

    ``mu0`` is the initial law (default: the invariant estimate).  The KS and
    Anderson-Darling statistics compare the sample with ``N(0, sigma2_martingale)``.
    """
    audit = audit_assumptions(spec, Probe())
    if not audit.Lambda2 < 1:
        raise AssumptionViolation(f"Lambda2 = {audit.Lambda2:.6g} >= 1")
    if n < 1 or reps < 2:
        raise PreconditionError("need n >= 1 and reps >= 2")
    rng = _rng(rng)
    if mu_star is None:
        mu_star = estimate_invariant(spec, 1000, max(20_000, reps), 10, rng).measure
    check_centered(spec, obs, mu_star)

    def draw_starts(mu):
        idx = rng.choice(len(mu), size=reps, p=mu.weights)
        return mu.points[idx]

    stationary = _partial_sums(spec, obs, draw_starts(mu_star), n, rng) / math.sqrt(n)
    sample = stationary if mu0 is None else _partial_sums(spec, obs, draw_starts(mu0), n, rng) / math.sqrt(n)
    sigma2_direct = float(np.var(stationary, ddof=1))

    truncation = None
    if chi is None:
        if spec.dim != 1:
            raise PreconditionError("pass a chi estimator for models with dim > 1")
        chi = _default_chi(spec, obs, mu_star, rng, chi_reps)
        truncation = {"max_terms": int(chi.max_terms), "grid_points": int(len(chi.grid)), "max_se": float(chi.ses.max())}
    s2m, s2m_se = sigma2_martingale(spec, obs, chi, mu_star, rng)

    report = LimitReport(sigma2_direct, s2m, s2m_se, chi_truncation=truncation, samples=sample)
    if s2m <= DEGENERATE_SIGMA2 and sigma2_direct <= DEGENERATE_SIGMA2:
        report.degenerate = True
        return report
    sd = math.sqrt(s2m)
    ks = stats.kstest(sample, "norm", args=(0.0, sd))
    report.ks_stat = float(ks.statistic)
    report.ks_pvalue = float(ks.pvalue)
    report.ad_stat = anderson_darling(sample, lambda v: stats.norm.cdf(v, scale=sd))
    return report


def default_checkpoints(n_max: int, start: int = 100, per_decade: int = 10) -> np.ndarray:
    """Log-spaced checkpoints from ``start`` to ``n_max``."""
    if n_max <= start:
        return np.unique(np.round(np.geomspace(1, n_max, per_decade)).astype(int))
    k = int(round(per_decade * math.log10(n_max / start))) + 1
    return np.unique(np.round(np.geomspace(start, n_max, k)).astype(int))


def lil_normalizer(n) -> np.ndarray:
    """``sqrt(2 n log log n)`` for n > e, and ``inf`` otherwise (so the ratio is 0)."""
    n = np.asarray(n, dtype=float)
    out = np.full(n.shape, np.inf)
    ok = n > math.e
    out[ok] = np.sqrt(2 * n[ok] * np.log(np.log(n[ok])))
    return out


def lil_experiment(
    spec: ModelSpec,
    obs: Observable,
    n_max: int,
    reps: int,
    checkpoints=None,
    rng=None,
    sigma2: Optional[float] = None,
    mu_star: Optional[EmpiricalMeasure] = None,
    chi=None,
    x0=None,
) -> LimitReport:
    """Track ``R_n = |sum_{i<n} g(x_i)| / (sigma sqrt(2 n log log n))`` along each replicate.

    Reports the per-replicate running maximum over the checkpoints and its
    distribution across replicates.
    """
    audit = audit_assumptions(spec, Probe())
    if not audit.Lambda2d < 1:
        raise AssumptionViolation(f"Lambda_(2+delta) = {audit.Lambda2d:.6g} >= 1")
    rng = _rng(rng)
    if mu_star is None:
        mu_star = estimate_invariant(spec, 1000, 20_000, 10, rng).measure
    check_centered(spec, obs, mu_star)
    truncation = None
    if sigma2 is None:
        if chi is None:
            chi = _default_chi(spec, obs, mu_star, rng)
            truncation = {"max_terms": int(chi.max_terms), "grid_points": int(len(chi.grid))}
        sigma2, _ = sigma2_martingale(spec, obs, chi, mu_star, rng)
    if not sigma2 > DEGENERATE_SIGMA2:
        raise SigmaZero(f"sigma^2 = {sigma2:.3g}: LIL normalization undefined")
    ck = default_checkpoints(n_max) if checkpoints is None else np.unique(np.asarray(checkpoints, dtype=int))
    if ck.size == 0 or ck[0] < 1 or ck[-1] > n_max:
        raise PreconditionError("checkpoints must lie in [1, n_max]")
    if x0 is None:
        starts = mu_star.points[rng.choice(len(mu_star), size=reps, p=mu_star.weights)]
    else:
        starts = np.repeat(as_points(x0, spec.dim)[:1], reps, axis=0)
    sums = _partial_sums(spec, obs, starts, int(ck[-1]), rng, ck)
    R = np.abs(sums) / (math.sqrt(sigma2) * lil_normalizer(ck)[:, None])
    running_max = R.max(axis=0)
    lil_stats = {
        "checkpoints": ck,
        "paths": R.T,
        "running_max": running_max,
        "median_running_max": float(np.median(running_max)),
        "q10_running_max": float(np.quantile(running_max, 0.1)),
        "q90_running_max": float(np.quantile(running_max, 0.9)),
        "final_median": float(np.median(R[-1])),
        "sigma2": float(sigma2),
    }
    return LimitReport(sigma2_martingale=float(sigma2), lil_endpoint_stats=lil_stats, chi_truncation=truncation)
