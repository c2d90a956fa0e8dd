import warnings

import numpy as np
import pytest

from cellcycle.chain_sim import EmpiricalMeasure, pushforward, resample_equal
from cellcycle.errors import AssumptionViolation, InsufficientSignal, StationarityWarning
from cellcycle.ergodicity_lab import (
    MixingCurve,
    bootstrap_se,
    estimate_invariant,
    fit_rate,
    mixing_curve,
    rate_constant_factor,
    second_moment_bound,
    self_distance,
)
from cellcycle.fm_metric import fm_distance_capped
from cellcycle.model_core import audit_assumptions, builtin_model

from oracles import AFFINE_MEAN, AFFINE_VAR


@pytest.fixture(scope="module")
def invariant():
    spec = builtin_model("affine1d")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StationarityWarning)
        return estimate_invariant(spec, 1000, 40_000, 10, rng=2)


def test_invariant_moments(invariant):
    x = invariant.samples[:, 0]
    se_m = bootstrap_se(x, np.mean, 100, rng=0)
    se_v = bootstrap_se(x, np.var, 100, rng=1)
    assert abs(x.mean() - AFFINE_MEAN) < 3 * se_m
    assert abs(x.var() - AFFINE_VAR) < 3 * se_v
    assert invariant.halves_distance >= 0 and invariant.noise_floor > 0


def test_identity_map_rejected():
    with pytest.raises(AssumptionViolation):
        estimate_invariant(builtin_model("affine1d", a=1.0, eps=0.0), 10, 100)


def test_pushforward_invariance(invariant):
    spec = builtin_model("affine1d")
    mu = invariant.measure
    pushed = pushforward(spec, mu, 1, rng=3)
    assert fm_distance_capped(pushed, mu) < 2 * self_distance(mu)


def test_uniqueness_from_two_starts(invariant):
    spec = builtin_model("affine1d")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StationarityWarning)
        other = estimate_invariant(spec, 1000, 40_000, 10, rng=5, x0=[25.0])
    d = fm_distance_capped(invariant.measure, other.measure)
    assert d < 2 * (invariant.noise_floor + other.noise_floor)


@pytest.mark.parametrize("name", ["affine1d", "cellcycle1d"])
def test_second_moment_bound(name):
    spec = builtin_model(name)
    a = audit_assumptions(spec)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StationarityWarning)
        est = estimate_invariant(spec, 500, 20_000, 5, rng=7)
    v2 = spec.V(est.samples) ** 2
    se = bootstrap_se(v2, np.mean, 100, rng=0)
    assert v2.mean() <= second_moment_bound(a.c, a.Lambda2) + 3 * se


def test_stationarity_warning_on_short_burn_in():
    spec = builtin_model("cellcycle1d")
    with pytest.warns(StationarityWarning):
        est = estimate_invariant(spec, 0, 2000, 1, rng=0, x0=[1e4])
    assert not est.stationary


def test_mixing_equal_measures():
    spec = builtin_model("affine1d")
    mu = EmpiricalMeasure.dirac([3.0], 1)
    c = mixing_curve(spec, mu, mu, 5, 5000, rng=0)
    assert len(c) == 5
    assert np.all(c.distance <= 3 * c.noise_floor)


def test_mixing_noise_free_exact():
    spec = builtin_model("affine1d", eps=0.0)
    c = mixing_curve(spec, EmpiricalMeasure.dirac([0.0], 1), EmpiricalMeasure.dirac([10.0], 1), 12, 10_000, rng=0)
    target = np.minimum(2.0, 10 * 0.5**c.n)
    assert np.all(np.abs(c.distance - target) <= 0.1)
    late = c.n >= 4
    assert np.all(np.abs(c.distance[late] - target[late]) <= 2 * c.noise_floor)


def test_mixing_with_noise_fits():
    spec = builtin_model("affine1d")
    c = mixing_curve(spec, EmpiricalMeasure.dirac([0.0], 1), EmpiricalMeasure.dirac([10.0], 1), 15, 20_000, rng=1)
    fit = fit_rate(c)
    assert 0 < fit.q < 1 and fit.r_squared > 0.95


def test_fit_rate_synthetic():
    n = np.arange(1, 21)
    fit = fit_rate(list(zip(n, 2 * 0.7**n)), noise_floor=0.0)
    assert fit.C == pytest.approx(2.0) and fit.q == pytest.approx(0.7) and fit.r_squared == pytest.approx(1.0)
    g = np.random.default_rng(0)
    noisy = 2 * 0.7**n + g.normal(0, 1e-3, n.size)
    fit = fit_rate(list(zip(n, noisy)), noise_floor=1e-3)
    assert abs(fit.q - 0.7) < 0.02


def test_fit_rate_guards():
    n = np.arange(1, 11)
    with pytest.raises(InsufficientSignal):
        fit_rate(list(zip(n, np.full(10, 1e-4))), noise_floor=1e-3)
    with pytest.raises(InsufficientSignal):
        fit_rate(list(zip(n, np.full(10, 2.0))), noise_floor=1e-3)


def test_fit_rate_skips_saturation():
    n = np.arange(1, 16)
    d = np.minimum(2.0, 10 * 0.5**n)
    fit = fit_rate(MixingCurve(n, d, 1e-4, np.full(15, 1e-4)))
    assert fit.n_range[0] == 3 and fit.q == pytest.approx(0.5)


def test_rate_constant_factor():
    spec = builtin_model("affine1d")
    mu = EmpiricalMeasure.uniform([0.0, 2.0])
    star = EmpiricalMeasure.dirac([1.0], 1)
    assert rate_constant_factor(spec, mu, star) == pytest.approx(3.0)


def test_resample_equal_keeps_law():
    mu = EmpiricalMeasure(np.array([[0.0], [1.0]]), np.array([0.25, 0.75]))
    r = resample_equal(mu, 1000, np.random.default_rng(0))
    assert np.mean(r.points[:, 0]) == pytest.approx(0.75, abs=0.01)
