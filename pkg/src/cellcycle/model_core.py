"""Model definition, numerical assumption audit and the builtin model catalogue.

A model is the randomly perturbed dynamical system

    x_{n+1} = S(x_n, t_{n+1}) + H_{n+1},

where the division time ``t`` has the state-dependent density ``p(x, .)`` on
``[0, T]`` and ``H`` is drawn from a noise law supported in the closed ball
of radius ``eps``.

All model callables are vectorized: points are arrays of shape ``(n, dim)``
and times arrays of shape ``(n,)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import InvalidParams, NonFiniteValue, NormalizationViolation, UnknownModel

Array = np.ndarray


def euclidean(x: Array, y: Array) -> Array:
    """Row-wise Euclidean distance between two ``(n, dim)`` arrays."""
    return np.sqrt(np.sum((np.asarray(x) - np.asarray(y)) ** 2, axis=-1))


def as_points(x, dim: int) -> Array:
    """Coerce a scalar, a single point or a batch of points to shape ``(n, dim)``."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, dim) if a.shape[0] == dim else a.reshape(-1, 1)
    if a.shape[-1] != dim:
        raise ValueError(f"points have dimension {a.shape[-1]}, model has {dim}")
    return a


@dataclass(frozen=True)
class AffineForm:
    """Structure hint ``S(x, t) = A(t) x + b(t)`` used by the fast simulation path.

    Exactly one of ``coef`` (scalar factor as a function of t, 1-d only) and
    ``matrix`` (constant ``(dim, dim)`` matrix) is set.
    """

    offset: Callable[[Array], Array]
    coef: Optional[Callable[[Array], Array]] = None
    matrix: Optional[Array] = None


@dataclass(frozen=True, eq=False)
class ModelSpec:
    dim: int
    T: float
    S: Callable[[Array, Array], Array]
    p: Callable[[Array, Array], Array]
    lam: Callable[[Array, Array], Array]
    eps: float
    eps_star: float
    noise: Callable[[np.random.Generator, int], Array]
    x_bar: Array
    metric: Callable[[Array, Array], Array] = euclidean
    state_constraint: Optional[Callable[[Array], Array]] = None
    name: str = "custom"
    params: Mapping[str, object] = field(default_factory=dict)
    # known upper bound on p, used as the rejection envelope
    p_max: Optional[float] = None
    # p(x, t) does not depend on x
    p_state_free: bool = False
    affine: Optional[AffineForm] = None
    # analytic override hooks: "Lambda" (callable j -> sup_x int lam^j p),
    # "M1", "M2", "dini" ((shape, params))
    analytic: Mapping[str, object] = field(default_factory=dict)
    probe_box: Optional[tuple] = None
    flags: tuple = ()

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidParams("dim must be a positive integer")
        if not self.T > 0:
            raise InvalidParams("T must be positive")
        if self.eps < 0 or self.eps_star < 0 or self.eps > self.eps_star + 1e-15:
            raise InvalidParams("need 0 <= eps <= eps_star")
        object.__setattr__(self, "x_bar", as_points(self.x_bar, self.dim)[0].copy())

    def V(self, x) -> Array:
        """Lyapunov function V(x) = rho(x, x_bar)."""
        pts = as_points(x, self.dim)
        return self.metric(pts, np.broadcast_to(self.x_bar, pts.shape))

    def contains(self, x) -> Array:
        pts = as_points(x, self.dim)
        if self.state_constraint is None:
            return np.ones(len(pts), dtype=bool)
        return np.asarray(self.state_constraint(pts), dtype=bool)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

_GL_ORDER = 16


def quadrature(T: float, n_nodes: int = 256):
    """Composite Gauss-Legendre nodes and weights on ``[0, T]``.

    Panels of 16 nodes each; panel edges fall on dyadic fractions of T, so
    kinks at ``T/2`` are integrated exactly.
    """
    if n_nodes < 1:
        raise ValueError("n_nodes must be positive")
    order = min(_GL_ORDER, n_nodes)
    panels = max(1, n_nodes // order)
    g, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, T, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * g[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _on_nodes(func, xs: Array, nodes: Array) -> Array:
    """Evaluate ``func(x, t)`` on the product grid; returns shape ``(len(xs), len(nodes))``."""
    k, q = len(xs), len(nodes)
    X = np.repeat(xs, q, axis=0)
    t = np.tile(nodes, k)
    vals = np.asarray(func(X, t), dtype=np.float64).reshape(k, q)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteValue(f"{getattr(func, '__name__', 'model function')} returned non-finite values")
    return vals


def normalization_error(spec: ModelSpec, xs, n_nodes: int = 256) -> Array:
    """``|int_0^T p(x, u) du - 1|`` for each probed x."""
    nodes, weights = quadrature(spec.T, n_nodes)
    P = _on_nodes(spec.p, as_points(xs, spec.dim), nodes)
    return np.abs(P @ weights - 1.0)


def lambda_moment(spec: ModelSpec, xs, j: float, n_nodes: int = 256) -> Array:
    """``int_0^T lam(x, t)^j p(x, t) dt`` for each probed x."""
    nodes, weights = quadrature(spec.T, n_nodes)
    pts = as_points(xs, spec.dim)
    L = _on_nodes(spec.lam, pts, nodes)
    P = _on_nodes(spec.p, pts, nodes)
    return (L**j * P) @ weights


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------


@dataclass
class Probe:
    """Probing configuration for :func:`audit_assumptions`.

    ``x_points`` overrides the grid built from ``box`` (or the model's
    ``probe_box``).  For dim > 1 the grid is the box corners plus a seeded
    uniform sample.
    """

    x_points: Optional[Array] = None
    box: Optional[tuple] = None
    n_x: int = 33
    n_nodes: int = 256
    delta: float = 0.5
    zeta: float = 0.5
    tol: float = 1e-8
    n_noise: int = 64
    phi_points: int = 33
    seed: int = 0


@dataclass
class Verdict:
    status: str  # "pass", "fail" or "inconclusive"
    evidence: str

    def __str__(self):
        return f"{self.status}: {self.evidence}"


@dataclass
class AssumptionAudit:
    Lambda1: float
    Lambda2: float
    Lambda2d: float
    delta: float
    c: float
    M1: float
    M2: float
    dini_modulus: tuple
    phi_table: tuple
    zeta: float
    verdicts: dict
    probe_values: dict = field(default_factory=dict)

    def passes(self, *names: str) -> bool:
        return all(self.verdicts[n].status == "pass" for n in names)

    def Lambda(self, j: float) -> float:
        if j == 1:
            return self.Lambda1
        if j == 2:
            return self.Lambda2
        if math.isclose(j, 2 + self.delta):
            return self.Lambda2d
        raise ValueError(f"exponent {j} was not audited (have 1, 2, {2 + self.delta})")

    def table(self) -> str:
        rows = [
            f"Lambda1      = {self.Lambda1:.10g}",
            f"Lambda2      = {self.Lambda2:.10g}",
            f"Lambda{2 + self.delta:<6g} = {self.Lambda2d:.10g}",
            f"c            = {self.c:.10g}",
            f"M1           = {self.M1:.10g}",
            f"M2           = {self.M2:.10g}",
            f"dini         = {self.dini_modulus[0]} {self.dini_modulus[1]}",
            "",
        ]
        for key, v in self.verdicts.items():
            rows.append(f"  {key:<5} {v.status:<13} {v.evidence}")
        return "\n".join(rows)


def probe_grid(spec: ModelSpec, probe: Probe):
    """Return ``(points, on_boundary)`` for the probe configuration."""
    if probe.x_points is not None:
        pts = as_points(probe.x_points, spec.dim)
        return pts, np.zeros(len(pts), dtype=bool)
    box = probe.box or spec.probe_box
    if box is None:
        box = (spec.x_bar - 10.0, spec.x_bar + 10.0)
    lo = np.broadcast_to(np.asarray(box[0], dtype=float), (spec.dim,))
    hi = np.broadcast_to(np.asarray(box[1], dtype=float), (spec.dim,))
    if spec.dim == 1:
        pts = np.linspace(lo[0], hi[0], probe.n_x).reshape(-1, 1)
    else:
        corners = np.array(np.meshgrid(*[(a, b) for a, b in zip(lo, hi)], indexing="ij")).reshape(spec.dim, -1).T
        rng = np.random.default_rng(probe.seed)
        inner = lo + (hi - lo) * rng.random((probe.n_x, spec.dim))
        pts = np.vstack([corners, inner])
    boundary = np.any(np.isclose(pts, lo) | np.isclose(pts, hi), axis=1)
    return pts, boundary


def _sup_with_boundary(values, boundary, tol):
    """Max over the probes, and whether the maximizer is pushed against the boundary."""
    vmax = float(np.max(values))
    if not np.any(boundary) or np.all(boundary):
        return vmax, False
    inner = float(np.max(values[~boundary]))
    return vmax, vmax > inner + max(tol, 1e-9 * abs(vmax))


def _fit_dini(r, D, tol):
    """Fit omega(r) = L r**beta to the probed pairs; beta in {1, .75, .5, .25}."""
    keep = r > 0
    r, D = r[keep], D[keep]
    if D.size == 0 or float(np.max(D)) <= tol:
        return ("linear", {"L": 0.0})
    best = None
    for beta in (1.0, 0.75, 0.5, 0.25):
        L = float(np.max(D / r**beta))
        resid = float(np.sum((L * r**beta - D) ** 2))
        if best is None or resid < best[0] - 1e-15:
            best = (resid, beta, L)
    _, beta, L = best
    if beta == 1.0:
        return ("linear", {"L": L})
    return ("power", {"L": L, "beta": beta})


def omega(shape_params, r):
    """Evaluate a fitted Dini modulus."""
    shape, params = shape_params
    r = np.asarray(r, dtype=float)
    if shape == "linear":
        return params["L"] * r
    if shape == "power":
        return params["L"] * r ** params["beta"]
    raise ValueError(f"unknown modulus shape {shape!r}")


def phi_series(shape_params, t, zeta: float, rtol: float = 1e-17, max_terms: int = 100_000):
    """``phi(t) = sum_{k>=1} omega(zeta**k t)`` by direct summation."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    total = np.zeros_like(t)
    z = zeta
    for _ in range(max_terms):
        term = omega(shape_params, z * t)
        total += term
        if np.all(term <= rtol * np.maximum(total, 1e-300)):
            break
        z *= zeta
    return total


def audit_assumptions(spec: ModelSpec, probe: Optional[Probe] = None) -> AssumptionAudit:
    """Estimate the model constants and give a verdict for assumptions (I)-(VI)."""
    probe = probe or Probe()
    if probe.n_nodes < 16:
        raise ValueError("probe needs at least 16 quadrature nodes")
    pts, boundary = probe_grid(spec, probe)
    if len(pts) < 2:
        raise ValueError("probe needs at least 2 x-points")
    nodes, weights = quadrature(spec.T, probe.n_nodes)
    P = _on_nodes(spec.p, pts, nodes)
    L = _on_nodes(spec.lam, pts, nodes)
    verdicts = {}

    norm_err = np.abs(P @ weights - 1.0)
    if np.max(norm_err) > probe.tol:
        i = int(np.argmax(norm_err))
        raise NormalizationViolation(f"|int p(x,.) - 1| = {norm_err[i]:.3g} at x = {pts[i].tolist()}")
    if np.any(P < 0) or np.any(L < 0):
        raise NonFiniteValue("p and lambda must be nonnegative")
    verdicts["I"] = Verdict("pass", f"max normalization error {np.max(norm_err):.2e} over {len(pts)} points")

    hooks = spec.analytic
    probe_values = {}
    lambdas = {}
    for key, j in (("II", 1.0), ("II'", 2.0), ("II''", 2.0 + probe.delta)):
        vals = (L**j * P) @ weights
        est, edge = _sup_with_boundary(vals, boundary, probe.tol)
        probe_values[f"Lambda{j:g}"] = est
        if "Lambda" in hooks:
            exact = float(hooks["Lambda"](j))
            ok = est <= exact + 1e-8 * max(1.0, exact)
            value = exact
            status = "pass" if (exact < 1 and ok) else "fail"
            ev = f"analytic {exact:.6g}, probe max {est:.6g}" + ("" if ok else " (probe exceeds analytic value)")
        else:
            value = est
            if edge:
                status, ev = "inconclusive", f"probe max {est:.6g} attained on the probe boundary"
            else:
                status = "pass" if est < 1 else "fail"
                ev = f"probe max {est:.6g}"
        lambdas[j] = value
        verdicts[key] = Verdict(status, ev)

    # (III)
    t_fine = np.union1d(nodes, np.linspace(0.0, spec.T, 1025))
    xb = np.repeat(spec.x_bar[None, :], len(t_fine), axis=0)
    Sx = np.asarray(spec.S(xb, t_fine), dtype=float)
    if not np.all(np.isfinite(Sx)):
        raise NonFiniteValue("S returned non-finite values")
    c = float(np.max(spec.metric(Sx, xb))) + spec.eps_star
    verdicts["III"] = Verdict("pass" if math.isfinite(c) else "fail", f"c = {c:.10g}")

    # (V)
    t_with_ends = np.concatenate([[0.0], nodes, [spec.T]])
    P_ends = _on_nodes(spec.p, pts, t_with_ends)
    M1_probe, M2_probe = float(P_ends.min()), float(P_ends.max())
    probe_values.update(M1=M1_probe, M2=M2_probe)
    M1 = float(hooks.get("M1", M1_probe))
    M2 = float(hooks.get("M2", M2_probe))
    if M1 > 0 and math.isfinite(M2):
        verdicts["V"] = Verdict("pass", f"M1 = {M1:.6g} > 0, M2 = {M2:.6g}")
    else:
        verdicts["V"] = Verdict("fail", f"M1 = {M1:.6g}, M2 = {M2:.6g}")

    # (IV)
    iu, ju = np.triu_indices(len(pts), k=1)
    D = np.abs(P[iu] - P[ju]) @ weights
    r = spec.metric(pts[iu], pts[ju])
    modulus = hooks.get("dini") or _fit_dini(r, D, probe.tol)
    bound_ok = bool(np.all(D <= omega(modulus, r) + probe.tol))
    t_phi = np.linspace(0.0, spec.T, probe.phi_points)
    phi = phi_series(modulus, t_phi, probe.zeta)
    phi_ok = bool(np.all(np.isfinite(phi)) and phi[0] == 0.0 and np.all(np.diff(phi) >= -1e-15))
    if bound_ok and phi_ok:
        verdicts["IV"] = Verdict("pass", f"omega = {modulus[0]} {modulus[1]} bounds {len(D)} pairs")
    else:
        verdicts["IV"] = Verdict("fail", f"omega = {modulus[0]} {modulus[1]}: bound {bound_ok}, phi {phi_ok}")

    # (VI)
    if spec.state_constraint is None:
        verdicts["VI"] = Verdict("pass", "X is the whole space")
    else:
        rng = np.random.default_rng(probe.seed)
        h = spec.noise(rng, probe.n_noise)
        sub = nodes[:: max(1, len(nodes) // 16)]
        X = np.repeat(pts, len(sub), axis=0)
        t = np.tile(sub, len(pts))
        img = np.asarray(spec.S(X, t), dtype=float)
        moved = (img[:, None, :] + h[None, :, :]).reshape(-1, spec.dim)
        ok = np.asarray(spec.state_constraint(moved), dtype=bool)
        n_bad = int(np.sum(~ok))
        verdicts["VI"] = Verdict(
            "pass" if n_bad == 0 else "fail", f"{n_bad} of {ok.size} probed S(x,t)+h left X"
        )

    return AssumptionAudit(
        Lambda1=lambdas[1.0],
        Lambda2=lambdas[2.0],
        Lambda2d=lambdas[2.0 + probe.delta],
        delta=probe.delta,
        c=c,
        M1=M1,
        M2=M2,
        dini_modulus=modulus,
        phi_table=(t_phi, phi),
        zeta=probe.zeta,
        verdicts=verdicts,
        probe_values=probe_values,
    )


# ---------------------------------------------------------------------------
# builtin models
# ---------------------------------------------------------------------------


def _uniform_interval(lo, hi):
    def noise(rng, n):
        return rng.uniform(lo, hi, size=(n, 1)) if hi > lo else np.full((n, 1), float(lo))

    return noise


def _uniform_ball(eps, dim):
    def noise(rng, n):
        if eps == 0:
            return np.zeros((n, dim))
        g = rng.standard_normal((n, dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return g * (eps * rng.random(n) ** (1.0 / dim))[:, None]

    return noise


def _check_keys(name, params, allowed):
    extra = set(params) - set(allowed)
    if extra:
        raise InvalidParams(f"unknown parameters for {name}: {sorted(extra)}")


def _affine1d(params):
    _check_keys("affine1d", params, {"a", "T", "eps", "eps_star", "x_bar"})
    a = float(params.get("a", 0.5))
    T = float(params.get("T", 1.0))
    eps = float(params.get("eps", 0.3))
    eps_star = float(params.get("eps_star", eps))
    x_bar = float(params.get("x_bar", 0.0))
    if not T > 0 or eps < 0 or eps > eps_star:
        raise InvalidParams("affine1d needs T > 0 and 0 <= eps <= eps_star")
    lam_const = abs(a)
    flags = ("Lambda1>=1",) if lam_const >= 1 else ()

    def S(x, t):
        return a * x + t[:, None]

    def p(x, t):
        return np.full(len(t), 1.0 / T)

    def lam(x, t):
        return np.full(len(t), lam_const)

    return ModelSpec(
        dim=1, T=T, S=S, p=p, lam=lam, eps=eps, eps_star=eps_star,
        noise=_uniform_interval(-eps, eps), x_bar=x_bar, name="affine1d",
        params=dict(a=a, T=T, eps=eps, eps_star=eps_star, x_bar=x_bar),
        p_max=1.0 / T, p_state_free=True,
        affine=AffineForm(offset=lambda t: t[..., None], coef=lambda t: np.full(np.shape(t), a)),
        analytic={"Lambda": lambda j: lam_const**j, "M1": 1.0 / T, "M2": 1.0 / T, "dini": ("linear", {"L": 0.0})},
        probe_box=(x_bar - 10.0, x_bar + 10.0), flags=flags,
    )


def _cellcycle_lambda(a, alpha, T):
    """Closed form of sup_x int (e^{at}/2)^j p(x,t) dt for the cellcycle1d density."""

    def moments(k):
        if abs(k) < 1e-12:
            return T, T * T / 2
        e = math.exp(k * T)
        i0 = (e - 1) / k
        i1 = T * e / k - (e - 1) / k**2
        return i0, i1

    def Lam(j):
        i0, i1 = moments(j * a)
        slope = i1 / T - i0 / 2  # coefficient of alpha * tanh(x)
        return 2.0**-j / T * (i0 + max(0.0, alpha * slope))

    return Lam


def _cellcycle1d(params):
    _check_keys("cellcycle1d", params, {"a", "alpha", "T", "eps", "eps_star"})
    a = float(params.get("a", 1.0))
    alpha = float(params.get("alpha", 0.5))
    T = float(params.get("T", 1.0))
    eps = float(params.get("eps", 0.2))
    eps_star = float(params.get("eps_star", eps))
    if not abs(alpha) < 2:
        raise InvalidParams("cellcycle1d needs |alpha| < 2 so that M1 > 0")
    if not T > 0 or eps < 0 or eps > eps_star:
        raise InvalidParams("cellcycle1d needs T > 0 and 0 <= eps <= eps_star")
    Lam = _cellcycle_lambda(a, alpha, T)
    flags = ("Lambda1>=1",) if Lam(1) >= 1 else ()

    def S(x, t):
        return 0.5 * x * np.exp(a * t)[:, None]

    def p(x, t):
        return (1.0 + alpha * (t / T - 0.5) * np.tanh(x[:, 0])) / T

    def lam(x, t):
        return 0.5 * np.exp(a * t)

    def inside(x):
        return x[:, 0] >= 0

    return ModelSpec(
        dim=1, T=T, S=S, p=p, lam=lam, eps=eps, eps_star=eps_star,
        noise=_uniform_interval(0.0, eps), x_bar=0.0, name="cellcycle1d",
        params=dict(a=a, alpha=alpha, T=T, eps=eps, eps_star=eps_star),
        state_constraint=inside,
        p_max=(1 + abs(alpha) / 2) / T, p_state_free=(alpha == 0),
        affine=AffineForm(offset=lambda t: np.zeros(np.shape(t) + (1,)), coef=lambda t: 0.5 * np.exp(a * t)),
        analytic={
            "Lambda": Lam,
            "M1": (1 - abs(alpha) / 2) / T,
            "M2": (1 + abs(alpha) / 2) / T,
            "dini": ("linear", {"L": abs(alpha) / 4}),
        },
        probe_box=(0.0, 10.0), flags=flags,
    )


def _affineNd(params):
    _check_keys("affineNd", params, {"A", "b", "dim", "a", "T", "eps", "eps_star"})
    if "A" in params:
        A = np.array(params["A"], dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise InvalidParams("A must be a square matrix")
    else:
        A = float(params.get("a", 0.5)) * np.eye(int(params.get("dim", 2)))
    dim = A.shape[0]
    b = np.broadcast_to(np.asarray(params.get("b", 1.0), dtype=float), (dim,)).copy()
    T = float(params.get("T", 1.0))
    eps = float(params.get("eps", 0.3))
    eps_star = float(params.get("eps_star", eps))
    if not T > 0 or eps < 0 or eps > eps_star:
        raise InvalidParams("affineNd needs T > 0 and 0 <= eps <= eps_star")
    lam_const = float(np.linalg.norm(A, 2))
    flags = ("Lambda1>=1",) if lam_const >= 1 else ()

    def S(x, t):
        return x @ A.T + t[:, None] * b[None, :]

    def p(x, t):
        return np.full(len(t), 1.0 / T)

    def lam(x, t):
        return np.full(len(t), lam_const)

    return ModelSpec(
        dim=dim, T=T, S=S, p=p, lam=lam, eps=eps, eps_star=eps_star,
        noise=_uniform_ball(eps, dim), x_bar=np.zeros(dim), name="affineNd",
        params=dict(A=A.tolist(), b=b.tolist(), T=T, eps=eps, eps_star=eps_star),
        p_max=1.0 / T, p_state_free=True,
        affine=AffineForm(offset=lambda t: t[..., None] * b, matrix=A),
        analytic={"Lambda": lambda j: lam_const**j, "M1": 1.0 / T, "M2": 1.0 / T, "dini": ("linear", {"L": 0.0})},
        probe_box=(-10.0, 10.0), flags=flags,
    )


BUILTIN_MODELS = {"affine1d": _affine1d, "cellcycle1d": _cellcycle1d, "affineNd": _affineNd}


def builtin_model(name: str, params: Optional[Mapping] = None, **kwargs) -> ModelSpec:
    """Construct one of the catalogue models (``affine1d``, ``cellcycle1d``, ``affineNd``)."""
    try:
        factory = BUILTIN_MODELS[name]
    except KeyError:
        raise UnknownModel(f"unknown model {name!r}; choose from {sorted(BUILTIN_MODELS)}") from None
    merged = dict(params or {})
    merged.update(kwargs)
    return factory(merged)
