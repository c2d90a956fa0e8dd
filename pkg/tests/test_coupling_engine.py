import numpy as np
import pytest
from scipy import stats

from cellcycle.chain_sim import simulate_many, step
from cellcycle.coupling_engine import (
    CoupledState,
    coupled_rows,
    coupled_step,
    coupled_step_many,
    coupling_diagnostics,
    coupling_mass,
    simulate_coupled,
    simulate_coupled_many,
)
from cellcycle.errors import InvalidKappa, PreconditionError
from cellcycle.model_core import audit_assumptions, builtin_model

from oracles import CELL_BETA_10_0, CELL_BETA_10_M10


def test_coupling_mass_closed_form(cell):
    # the density formula is defined for any real x even though X = [0, inf)
    assert coupling_mass(cell, [10.0], [-10.0])[0] == pytest.approx(CELL_BETA_10_M10, abs=1e-9)
    assert coupling_mass(cell, [10.0], [0.0])[0] == pytest.approx(CELL_BETA_10_0, abs=1e-9)
    assert coupling_mass(cell, [3.0], [3.0])[0] == pytest.approx(1.0, abs=1e-12)


def test_theta_frequency(cell, rng):
    X = np.full((10_000, 1), 10.0)
    Y = np.zeros((10_000, 1))
    _, _, theta, tx, ty, _ = coupled_step_many(cell, X, Y, rng)
    p = CELL_BETA_10_0
    se = np.sqrt(p * (1 - p) / len(theta))
    assert abs(theta.mean() - p) < 3 * se
    np.testing.assert_array_equal(tx[theta == 1], ty[theta == 1])
    assert np.all(tx[theta == 0] != ty[theta == 0])


def test_equal_start_stays_equal(cell):
    tr = simulate_coupled(cell, [2.0], [2.0], 30, rng=4)
    np.testing.assert_array_equal(tr.xs, tr.ys)
    assert np.all(tr.theta == 1)
    assert tr.states[0].theta == 1 and tr.branch[0] == "Q"


def test_state_free_always_coupled(affine):
    b = simulate_coupled_many(affine, [0.0], [4.0], 20, reps=50, rng=0)
    assert np.all(b.theta == 1)
    np.testing.assert_array_equal(b.t_x, b.t_y)


def test_affine_contraction_exact(affine):
    b = simulate_coupled_many(affine, [-3.0], [5.0], 25, reps=20, rng=1)
    gap = np.abs(b.xs[:, :, 0] - b.ys[:, :, 0])
    expected = 8.0 * 0.5 ** np.arange(26)
    np.testing.assert_allclose(gap, np.repeat(expected[:, None], 20, axis=1), rtol=1e-12, atol=1e-13)


def test_shared_noise(cell):
    b = simulate_coupled_many(cell, [4.0], [0.5], 10, reps=200, rng=2)
    S = lambda x, t: 0.5 * x * np.exp(t)
    np.testing.assert_allclose(b.xs[1:, :, 0], S(b.xs[:-1, :, 0], b.t_x) + b.noises[..., 0], rtol=1e-13)
    np.testing.assert_allclose(b.ys[1:, :, 0], S(b.ys[:-1, :, 0], b.t_y) + b.noises[..., 0], rtol=1e-13)


def test_one_step_marginal(cell):
    x, y = 1.5, 0.1
    X = np.full((10_000, 1), x)
    Xc, Yc, *_ = coupled_step_many(cell, X, np.full((10_000, 1), y), np.random.default_rng(3))
    Xs, _, _ = step(cell, X, np.random.default_rng(4))
    Ys, _, _ = step(cell, np.full((10_000, 1), y), np.random.default_rng(5))
    assert stats.ks_2samp(Xc[:, 0], Xs[:, 0]).pvalue > 0.01
    assert stats.ks_2samp(Yc[:, 0], Ys[:, 0]).pvalue > 0.01


@pytest.mark.parametrize("n", [2, 7])
def test_multi_step_marginals(cell, n):
    b = simulate_coupled_many(cell, [3.0], [0.2], n, reps=10_000, rng=10 + n)
    sx = simulate_many(cell, np.full((10_000, 1), 3.0), n, rng=20 + n)[-1, :, 0]
    sy = simulate_many(cell, np.full((10_000, 1), 0.2), n, rng=30 + n)[-1, :, 0]
    assert stats.ks_2samp(b.xs[-1, :, 0], sx).pvalue > 0.01
    assert stats.ks_2samp(b.ys[-1, :, 0], sy).pvalue > 0.01


def test_forced_q_distance_bound(affine):
    a = audit_assumptions(affine)
    b = simulate_coupled_many(affine, [0.0], [6.0], 15, reps=500, rng=6)
    d = np.abs(b.xs[..., 0] - b.ys[..., 0]).mean(axis=1)
    assert np.all(d <= a.Lambda1 ** np.arange(16) * 6.0 * (1 + 1e-12))


def test_start_outside_X(cell):
    with pytest.raises(PreconditionError):
        simulate_coupled_many(cell, [10.0], [-10.0], 3, reps=2, rng=0)


def test_coupled_step_single(cell):
    s = coupled_step(cell, CoupledState(np.array([1.0]), np.array([2.0]), 1), np.random.default_rng(0))
    assert s.theta in (0, 1) and s.x.shape == (1,)


def test_diagnostics_equal_start(cell):
    d = coupling_diagnostics(cell, [1.0], [1.0], 0.05, horizon=50, reps=100, rng=0)
    assert np.all(d.couple_times == 1) and d.censoring_rate == 0.0
    assert np.all(d.hit_times >= 1)


def test_diagnostics_state_free(affine):
    d = coupling_diagnostics(affine, [5.0], [-5.0], 0.25, horizon=50, reps=100, rng=0)
    assert d.censoring_rate == 0.0 and np.all(d.couple_times == 1)
    assert d.full_coupling_fraction == 1.0


def test_invalid_kappa(cell, affine):
    with pytest.raises(InvalidKappa):
        coupling_diagnostics(affine, [0.0], [1.0], 0.6, horizon=50, reps=100)
    with pytest.raises(InvalidKappa):
        coupling_diagnostics(cell, [0.0], [1.0], 0.2, horizon=50, reps=100)
    with pytest.raises(PreconditionError):
        coupling_diagnostics(cell, [0.0], [1.0], 0.05, horizon=10, reps=100)


def test_hitting_tail_geometric(cell):
    d = coupling_diagnostics(cell, [20.0], [0.0], 0.09, horizon=60, reps=2000, rng=1)
    assert d.hit_fit is not None
    assert d.hit_fit.q < 1 and d.hit_fit.r_squared > 0.9


@pytest.mark.parametrize("name,x0,y0", [("cellcycle1d", 5.0, 0.0), ("affine1d", 0.2, 0.9)])
def test_gap_contraction(name, x0, y0):
    spec = builtin_model(name)
    kappa = 0.5 * (1 - audit_assumptions(spec).Lambda1)
    d = coupling_diagnostics(spec, [x0], [y0], kappa, horizon=60, reps=2000, rng=2)
    assert d.q_fit.q < 1 and d.q_fit.r_squared > 0.9


def test_full_coupling_fraction_stable(cell):
    f1 = coupling_diagnostics(cell, [5.0], [0.0], 0.05, horizon=50, reps=1000, rng=3).full_coupling_fraction
    f2 = coupling_diagnostics(cell, [5.0], [0.0], 0.05, horizon=50, reps=2000, rng=4).full_coupling_fraction
    assert f1 > 0 and f2 > 0
    se = np.sqrt(f2 * (1 - f2) * (1 / 1000 + 1 / 2000))
    assert abs(f1 - f2) < 4 * se


def test_vbar_drift(cell):
    a = audit_assumptions(cell)
    d = coupling_diagnostics(cell, [30.0], [10.0], 0.05, horizon=50, reps=2000, rng=5)
    v, se = d.vbar_series, d.vbar_se
    assert np.all(v[1:] <= a.Lambda1 * v[:-1] + 2 * a.c + 3 * (se[1:] + se[:-1]))


def test_coupled_rows(cell):
    b = simulate_coupled_many(cell, [1.0], [2.0], 3, reps=2, rng=0)
    header, rows = coupled_rows(b, cell)
    assert header == ["replicate", "n", "x0", "y0", "theta", "vbar"] and len(rows) == 8
