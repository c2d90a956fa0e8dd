import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellcycle.errors import InvalidParams, NonFiniteValue, NormalizationViolation, UnknownModel
from cellcycle.model_core import (
    ModelSpec,
    Probe,
    audit_assumptions,
    builtin_model,
    normalization_error,
    omega,
    phi_series,
    quadrature,
)

from oracles import CELL0_LAMBDA1, CELL0_LAMBDA2, CELL_LAMBDA


def test_quadrature_integrates_polynomials():
    nodes, w = quadrature(2.0, 256)
    assert np.isclose(w.sum(), 2.0, atol=1e-13)
    assert np.isclose(w @ nodes**5, 2.0**6 / 6, rtol=1e-12)


def test_affine_audit_exact(affine):
    t0 = time.perf_counter()
    a = audit_assumptions(affine, Probe())
    assert time.perf_counter() - t0 < 1.0
    assert abs(a.Lambda1 - 0.5) < 1e-8
    assert abs(a.Lambda2 - 0.25) < 1e-8
    assert abs(a.Lambda2d - 0.5**2.5) < 1e-8
    assert abs(a.c - 1.3) < 1e-12
    assert a.M1 == pytest.approx(1.0) and a.M2 == pytest.approx(1.0)
    assert a.passes("I", "II", "II'", "II''", "III", "V", "IV")


def test_cell_audit_matches_quad_oracle(cell):
    a = audit_assumptions(cell, Probe())
    for j, v in CELL_LAMBDA.items():
        assert a.Lambda(j) == pytest.approx(v, abs=1e-8)
    assert a.M1 == pytest.approx(0.75, abs=1e-9)
    assert a.M2 == pytest.approx(1.25, abs=1e-9)


def test_cell_alpha_zero_closed_form():
    a = audit_assumptions(builtin_model("cellcycle1d", alpha=0.0), Probe())
    assert a.Lambda1 == pytest.approx(CELL0_LAMBDA1, abs=1e-10)
    assert a.Lambda2 == pytest.approx(CELL0_LAMBDA2, abs=1e-10)
    assert a.dini_modulus[0] == "linear" and a.dini_modulus[1]["L"] == 0.0


def test_affine_c_depends_on_eps_star():
    spec = builtin_model("affine1d", eps=0.1, eps_star=0.3)
    assert audit_assumptions(spec).c == pytest.approx(1.3)


def test_lambda_flagged_not_rejected():
    spec = builtin_model("affine1d", a=1.2)
    a = audit_assumptions(spec)
    assert a.Lambda1 == pytest.approx(1.2)
    assert a.verdicts["II"].status == "fail"


def test_unknown_model_and_bad_params():
    with pytest.raises(UnknownModel):
        builtin_model("nope")
    with pytest.raises(InvalidParams):
        builtin_model("affine1d", bogus=1)
    with pytest.raises(InvalidParams):
        builtin_model("cellcycle1d", alpha=2.5)


def test_normalization_violation():
    base = builtin_model("affine1d")
    bad = ModelSpec(dim=1, T=1.0, S=base.S, p=lambda x, t: 1.1 + 0 * t, lam=base.lam, eps=0.3, eps_star=0.3,
                    noise=base.noise, x_bar=np.zeros(1))
    with pytest.raises(NormalizationViolation):
        audit_assumptions(bad)


def test_nonfinite_values():
    base = builtin_model("affine1d")
    bad = ModelSpec(dim=1, T=1.0, S=base.S, p=base.p, lam=lambda x, t: np.full_like(t, np.nan), eps=0.3, eps_star=0.3,
                    noise=base.noise, x_bar=np.zeros(1))
    with pytest.raises(NonFiniteValue):
        audit_assumptions(bad)


@pytest.mark.parametrize("name,params", [("affine1d", {}), ("cellcycle1d", {}), ("cellcycle1d", {"alpha": -1.5}),
                                         ("affineNd", {"dim": 3})])
def test_normalization_random_points(name, params, rng):
    spec = builtin_model(name, params)
    lo, hi = spec.probe_box if spec.probe_box else (-10, 10)
    xs = rng.uniform(np.maximum(lo, 0 if name == "cellcycle1d" else lo), hi, size=(100, spec.dim))
    assert np.max(normalization_error(spec, xs, 256)) < 1e-8


@pytest.mark.parametrize("name,params", [("affine1d", {}), ("affine1d", {"a": 0.9}), ("cellcycle1d", {}),
                                         ("cellcycle1d", {"a": 1.3}), ("affineNd", {"dim": 2, "a": 0.7})])
def test_holder_implication(name, params):
    a = audit_assumptions(builtin_model(name, params))
    if a.Lambda2d < 1:
        assert a.Lambda2 < 1 and a.Lambda1 < 1
    assert a.Lambda1 <= a.Lambda2**0.5 + 1e-12 <= a.Lambda2d ** (1 / (2 + a.delta)) + 2e-12


def test_phi_table_linear_closed_form(cell):
    a = audit_assumptions(cell, Probe(zeta=0.3))
    shape, par = a.dini_modulus
    assert shape == "linear"
    t, phi = a.phi_table
    np.testing.assert_allclose(phi, par["L"] * t * 0.3 / 0.7, rtol=0, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(L=st.floats(0.01, 10), t=st.floats(0, 5), zeta=st.floats(0.05, 0.95))
def test_phi_series_linear(L, t, zeta):
    assert phi_series(("linear", {"L": L}), np.array([t]), zeta)[0] == pytest.approx(L * t * zeta / (1 - zeta), abs=1e-10)


def test_phi_tends_to_zero():
    t = np.geomspace(1e-8, 1, 20)
    phi = phi_series(("power", {"L": 1.0, "beta": 0.5}), t, 0.5)
    assert np.all(np.isfinite(phi)) and np.all(np.diff(phi) > 0) and phi[0] < 1e-3


def test_omega_shapes():
    assert omega(("linear", {"L": 2.0}), 0.5) == 1.0
    assert omega(("power", {"L": 2.0, "beta": 0.5}), 0.25) == pytest.approx(1.0)


def test_dini_bound_holds_on_probes(cell):
    a = audit_assumptions(cell)
    assert a.verdicts["IV"].status == "pass"
    # |p(x,.) - p(y,.)|_1 = 0.5 (1/4) |tanh x - tanh y| <= L |x - y| with L = 1/8
    assert a.dini_modulus[1]["L"] == pytest.approx(0.125)


def test_boundary_maximizer_inconclusive():
    # Lambda grows with |x| for this density, so the sup sits on the probe box edge
    base = builtin_model("affine1d")
    spec = ModelSpec(dim=1, T=1.0, S=base.S, p=base.p,
                     lam=lambda x, t: 0.5 * np.tanh(np.abs(x[:, 0])) + 0 * t, eps=0.3, eps_star=0.3,
                     noise=base.noise, x_bar=np.zeros(1), probe_box=(-5.0, 5.0))
    a = audit_assumptions(spec)
    assert a.verdicts["II"].status == "inconclusive"


def test_cellcycle_state_constraint(cell):
    assert cell.contains(np.array([[0.0], [3.0]])).all()
    assert not cell.contains(np.array([[-0.1]]))[0]
    assert audit_assumptions(cell).verdicts["VI"].status == "pass"


def test_affineNd_matrix():
    A = [[0.5, 0.1], [0.0, 0.4]]
    spec = builtin_model("affineNd", A=A)
    a = audit_assumptions(spec)
    assert a.Lambda1 == pytest.approx(np.linalg.norm(np.array(A), 2), abs=1e-12)
    assert spec.dim == 2 and math.isfinite(a.c)
