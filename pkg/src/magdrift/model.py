"""Problem instances for the magnetic Schrödinger operator and derived field data.

A :class:`ModelSpec` stores the metric ``g^{jk}``, the magnetic potential
``V_j`` and the electric potential ``V`` as sympy expressions in the
coordinates ``x1, ..., xd``.  All derivatives are taken symbolically once and
compiled with :func:`sympy.lambdify`, so every numeric routine below works on
plain numpy arrays.

Points are passed with the coordinate axis first: ``x`` has shape ``(d,)`` for
a single point or ``(d, ...)`` for a batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
import sympy as sp

from .errors import ConditionViolation, ConfigError, FieldHazard

SCHRODINGER = "schrodinger"
PAULI = "pauli"
KINDS = (SCHRODINGER, PAULI)

EPS0 = 1e-3
C_UPPER = 1e3
F_HAZARD = 1e-12


def coords(dim: int):
    return sp.symbols(" ".join(f"x{j + 1}" for j in range(dim)), real=True)


def momenta(dim: int):
    return sp.symbols(" ".join(f"xi{j + 1}" for j in range(dim)), real=True)


def _compile(exprs, syms) -> Callable[..., np.ndarray]:
    """Compile a flat list of expressions into ``f(*coords) -> (len, *shape)``."""
    exprs = [sp.sympify(e) for e in exprs]
    # degenerate models (zero field) give zoo for V/F; evaluate those as nan
    exprs = [sp.nan if e.has(sp.zoo, sp.oo, -sp.oo, sp.nan) else e for e in exprs]
    fn = sp.lambdify(syms, exprs, modules="numpy")

    def call(*args):
        args = np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in args])
        out = fn(*args)
        shape = args[0].shape
        return np.stack([np.broadcast_to(np.asarray(o, dtype=float), shape) for o in out])

    return call


class _Numerics:
    """Compiled numeric kernels of a model (built lazily, shared read-only)."""

    def __init__(self, m: "ModelSpec"):
        d = m.dim
        xs = coords(d)
        ps = momenta(d)
        G = sp.Matrix(m.metric)
        A = list(m.vecpot)
        V = m.scalpot
        Ften = sp.zeros(d, d)
        for j in range(d):
            for k in range(d):
                Ften[j, k] = sp.diff(A[k], xs[j]) - sp.diff(A[j], xs[k])
        ginv_det = G.det()
        sqrtg = 1 / sp.sqrt(ginv_det)
        F2 = sp.Rational(1, 2) * sum(
            G[j, k] * G[l, n] * Ften[j, l] * Ften[k, n]
            for j in range(d) for k in range(d) for l in range(d) for n in range(d)
        )
        F = sp.sqrt(F2)
        q = V / F
        invF = 1 / F

        self.syms = xs
        self.V = _compile([V], xs)
        self.gradV = _compile([sp.diff(V, x) for x in xs], xs)
        self.hessV = _compile([sp.diff(V, a, b) for a in xs for b in xs], xs)
        self.A = _compile(A, xs)
        self.jacA = _compile([sp.diff(A[k], xs[j]) for j in range(d) for k in range(d)], xs)
        self.hessA = _compile(
            [sp.diff(A[k], a, b) for k in range(d) for a in xs for b in xs], xs
        )
        self.metric = _compile(list(G), xs)
        self.lower_metric = _compile(list(G.inv()), xs)
        self.sqrtg = _compile([sqrtg], xs)
        self.Ften = _compile(list(Ften), xs)
        self.F = _compile([F], xs)
        self.gradF = _compile([sp.diff(F, x) for x in xs], xs)
        self.q = _compile([q], xs)
        self.gradq = _compile([sp.diff(q, x) for x in xs], xs)
        self.hessq = _compile([sp.diff(q, a, b) for a in xs for b in xs], xs)
        self.gradinvF = _compile([sp.diff(invF, x) for x in xs], xs)
        self.hessinvF = _compile([sp.diff(invF, a, b) for a in xs for b in xs], xs)
        if d == 3:
            Fvec = [Ften[1, 2] / sqrtg, Ften[2, 0] / sqrtg, Ften[0, 1] / sqrtg]
            self.Fvec = _compile(Fvec, xs)
            self.dq3 = _compile([sp.diff(q, xs[2])], xs)
            self.d2q3 = _compile([sp.diff(q, xs[2], 2)], xs)
            self.dV3 = _compile([sp.diff(V, xs[2])], xs)
            self.dF3 = _compile([sp.diff(F, xs[2])], xs)
            self.g33 = _compile([G.inv()[2, 2]], xs)
            self.ginv33 = _compile([G[2, 2]], xs)
            self.dsqrtg33 = _compile([sp.diff(sp.sqrt(G.inv()[2, 2]), x) for x in xs[:2]], xs)

        mu, h = m.mu, m.hplanck
        P = [ps[j] - mu * A[j] for j in range(d)]
        a = sum(G[j, k] * P[j] * P[k] for j in range(d) for k in range(d)) + V
        if m.kind == PAULI:
            a = a - mu * h * F
        self.symbol = sp.lambdify((*xs, *ps), a, modules="numpy")
        grad = [sp.diff(a, v) for v in (*ps, *xs)]
        self._rhs = sp.lambdify((*xs, *ps), grad, modules="numpy")
        self.d = d

    def hamilton_rhs(self, y: np.ndarray) -> np.ndarray:
        d = self.d
        g = self._rhs(*y)
        out = np.empty(2 * d)
        out[:d] = g[:d]
        out[d:] = [-v for v in g[d:]]
        return out


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A complete problem instance.

    ``metric`` holds the contravariant metric ``g^{jk}`` as nested sequences of
    sympy expressions; ``vecpot`` and ``scalpot`` are the magnetic and electric
    potentials.  ``tau`` is the energy level used by the 2D drift machinery
    (``V - tau``); for the trapping models of the 3D catalog the level is baked
    into ``scalpot`` and ``tau`` is 0.
    """

    dim: int
    metric: tuple
    vecpot: tuple
    scalpot: sp.Expr
    mu: float = 1.0
    hplanck: float = 1.0
    tau: float = 0.0
    kind: str = SCHRODINGER
    boundary_slope: Optional[float] = None
    domain: Optional[tuple] = None
    C0: float = 2.0
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigError(f"dim must be 2 or 3, got {self.dim}")
        if not self.mu >= 1:
            raise ConfigError(f"mu must be >= 1, got {self.mu}")
        if not 0 < self.hplanck <= 1:
            raise ConfigError(f"h must lie in (0, 1], got {self.hplanck}")
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if len(self.vecpot) != self.dim or len(self.metric) != self.dim:
            raise ConfigError("metric and vecpot must match dim")
        if self.boundary_slope is not None and self.dim != 3:
            raise ConfigError("a boundary is only supported in dimension 3")
        G = sp.Matrix(self.metric)
        if G.shape != (self.dim, self.dim) or any(
            sp.simplify(G[j, k] - G[k, j]) != 0
            for j in range(self.dim) for k in range(j)
        ):
            raise ConfigError("metric must be a symmetric dim x dim matrix")
        if self.domain is None:
            box = [(-1.0, 1.0)] * self.dim
            if self.dim == 3:
                box[2] = (-self.C0, self.C0)
            object.__setattr__(self, "domain", tuple(box))

    @cached_property
    def num(self) -> _Numerics:
        return _Numerics(self)

    def with_params(self, **changes) -> "ModelSpec":
        """Copy with some scalar fields replaced (mu, hplanck, tau, kind, ...)."""
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return ModelSpec(**kw)

    @property
    def symbols(self):
        return coords(self.dim)


def euclidean(dim: int, scale=1) -> tuple:
    return tuple(tuple(sp.sympify(scale if j == k else 0) for k in range(dim)) for j in range(dim))


def from_expressions(
    vecpot: Sequence[str],
    scalpot: str,
    metric: Optional[Sequence[Sequence[str]]] = None,
    **kwargs,
) -> ModelSpec:
    """Build a model from expression strings in ``x1, x2[, x3]``."""
    dim = len(vecpot)
    xs = coords(dim)
    loc = {str(x): x for x in xs}
    try:
        A = tuple(sp.sympify(v, locals=loc) for v in vecpot)
        V = sp.sympify(scalpot, locals=loc)
        G = euclidean(dim) if metric is None else tuple(
            tuple(sp.sympify(e, locals=loc) for e in row) for row in metric
        )
    except (sp.SympifyError, TypeError) as exc:
        raise ConfigError(f"cannot parse model expression: {exc}") from exc
    allowed = set(xs)
    for e in (*A, V, *(c for row in G for c in row)):
        extra = e.free_symbols - allowed
        if extra:
            raise ConfigError(f"unknown symbols in model expression: {sorted(map(str, extra))}")
    return ModelSpec(dim=dim, metric=G, vecpot=A, scalpot=V, **kwargs)


# -- pointwise field quantities -------------------------------------------------------


def _pt(model: ModelSpec, x):
    x = np.asarray(x, dtype=float)
    if x.shape[0] != model.dim:
        raise ValueError(f"expected {model.dim} coordinates, got shape {x.shape}")
    return x


def field_tensor(model: ModelSpec, x) -> np.ndarray:
    """Antisymmetric matrix ``F_{jk} = d_j V_k - d_k V_j`` at ``x``."""
    x = _pt(model, x)
    d = model.dim
    jac = model.num.jacA(*x).reshape(d, d, *x.shape[1:])
    return jac - np.swapaxes(jac, 0, 1)


def sqrt_g(model: ModelSpec, x) -> np.ndarray:
    x = _pt(model, x)
    return model.num.sqrtg(*x)[0]


def scalar_intensity(model: ModelSpec, x, check: bool = False, eps0: float = EPS0) -> np.ndarray:
    """Invariant magnitude ``F`` of the magnetic field.

    In 2D ``F = |F_12| / sqrt(g)``; in 3D the tensor form
    ``(1/2 sum g^{jk} g^{lm} F_jl F_km)^{1/2}``.  With ``check=True`` a value
    below ``eps0`` raises :class:`ConditionViolation`.
    """
    x = _pt(model, x)
    if model.dim == 2:
        F = np.abs(field_tensor(model, x)[0, 1]) / sqrt_g(model, x)
    else:
        Ft = field_tensor(model, x)
        G = model.num.metric(*x).reshape(3, 3, *x.shape[1:])
        s = np.einsum("jk...,lm...,jl...,km...->...", G, G, Ft, Ft)
        F = np.sqrt(0.5 * s)
    if check and np.any(F < eps0):
        raise ConditionViolation(f"F = {np.min(F):.3g} < eps0 = {eps0}")
    return F


def pseudoscalar(model: ModelSpec, x) -> np.ndarray:
    """Signed 2D intensity ``f = F_12 / sqrt(g)``."""
    if model.dim != 2:
        raise ValueError("pseudoscalar intensity is defined for dim 2 only")
    x = _pt(model, x)
    return field_tensor(model, x)[0, 1] / sqrt_g(model, x)


def field_vector_3d(model: ModelSpec, x) -> np.ndarray:
    """Contravariant field ``F^j = (1/(2 sqrt g)) eps^{jkl} F_kl``."""
    if model.dim != 3:
        raise ValueError("field vector is defined for dim 3 only")
    x = _pt(model, x)
    return model.num.Fvec(*x)


def vector_norm(model: ModelSpec, x, v) -> np.ndarray:
    """Metric length ``(sum g_jk v^j v^k)^{1/2}`` of a contravariant vector."""
    x = _pt(model, x)
    d = model.dim
    g = model.num.lower_metric(*x).reshape(d, d, *x.shape[1:])
    return np.sqrt(np.einsum("jk...,j...,k...->...", g, v, v))


@dataclass(frozen=True)
class FieldData:
    tensor: np.ndarray
    intensity: float
    sqrtg: float
    vector3: Optional[np.ndarray] = None
    pseudoscalar2: Optional[float] = None


def field_data(model: ModelSpec, x) -> FieldData:
    x = _pt(model, x)
    return FieldData(
        tensor=field_tensor(model, x),
        intensity=float(scalar_intensity(model, x)),
        sqrtg=float(sqrt_g(model, x)),
        vector3=field_vector_3d(model, x) if model.dim == 3 else None,
        pseudoscalar2=float(pseudoscalar(model, x)) if model.dim == 2 else None,
    )


def box_grid(domain, n) -> list[np.ndarray]:
    """Axis vectors of a uniform tensor grid with ``n`` nodes per axis."""
    if np.isscalar(n):
        n = [int(n)] * len(domain)
    return [np.linspace(lo, hi, k) for (lo, hi), k in zip(domain, n)]


def _mesh(grid) -> np.ndarray:
    return np.stack(np.meshgrid(*grid, indexing="ij"))


def divergence_residual(field_fn, grid, fd_step: float = 1e-5) -> float:
    """Max over grid nodes of ``|sum_j d_j W^j|`` by central differences.

    ``field_fn(x)`` maps points of shape ``(3, ...)`` to a densitised vector
    field ``W`` of the same shape.
    """
    X = _mesh(grid)
    div = np.zeros(X.shape[1:])
    for j in range(X.shape[0]):
        e = np.zeros(X.shape[0])
        e[j] = fd_step
        shift = e.reshape(-1, *([1] * (X.ndim - 1)))
        div += (field_fn(X + shift)[j] - field_fn(X - shift)[j]) / (2 * fd_step)
    return float(np.max(np.abs(div)))


def solenoidal_residual(model: ModelSpec, grid, fd_step: float = 1e-5, field_fn=None) -> float:
    """Diagnostic bound on ``sum_j d_j(F^j sqrt g)`` over the grid nodes.

    ``field_fn`` replaces ``F^j`` (e.g. to test a corrupted field).
    """
    if model.dim != 3:
        raise ValueError("solenoidal residual is defined for dim 3 only")
    fn = field_fn or (lambda X: field_vector_3d(model, X))
    return divergence_residual(lambda X: fn(X) * sqrt_g(model, X), grid, fd_step)


def vf_grad_hess(model: ModelSpec, x, tau: float = 0.0):
    """Gradient and Hessian of ``(V - tau)/F`` at ``x``."""
    x = _pt(model, x)
    d = model.dim
    F = scalar_intensity(model, x)
    if np.any(F < F_HAZARD):
        raise FieldHazard(f"F = {np.min(F):.3g} too small for V/F")
    num = model.num
    grad = num.gradq(*x) - tau * num.gradinvF(*x)
    hess = num.hessq(*x) - tau * num.hessinvF(*x)
    return grad, hess.reshape(d, d, *x.shape[1:])


def check_ellipticity(model: ModelSpec, grid, eps0: float = EPS0, c: float = C_UPPER):
    """Worst eigenvalue bounds of ``g^{jk}`` over grid nodes."""
    X = _mesh(grid)
    d = model.dim
    G = model.num.metric(*X).reshape(d, d, -1)
    ev = np.linalg.eigvalsh(np.moveaxis(G, -1, 0))
    lo, hi = float(ev.min()), float(ev.max())
    return ConditionResult(lo >= eps0 and hi <= c, lo, f"eigenvalues of g^jk in [{lo:.4g}, {hi:.4g}]")


@dataclass(frozen=True)
class ConditionResult:
    holds: bool
    margin: float
    detail: str = ""


def check_conditions(
    model: ModelSpec,
    grid=None,
    eps: float = EPS0,
    eps0: float = EPS0,
    z0_fn: Optional[Callable] = None,
) -> dict[str, ConditionResult]:
    """Evaluate every pointwise hypothesis on the grid nodes.

    ``margin`` is the worst-case value of the tested quantity (e.g. the minimum
    of ``|grad(V/F)|``).  The trapping conditions only apply in 3D and need the
    minimiser ``z0(x')`` which defaults to :func:`magdrift.action.minimize_z0`.
    """
    if grid is None:
        grid = box_grid(model.domain, 17)
    X = _mesh(grid)
    d = model.dim
    num = model.num
    out: dict[str, ConditionResult] = {}
    out["13-1-4"] = check_ellipticity(model, grid, eps0)
    F = scalar_intensity(model, X)
    out["13-2-1"] = ConditionResult(bool(F.min() >= eps0), float(F.min()))
    V = num.V(*X)[0] - model.tau
    gV = num.gradV(*X)
    s = np.abs(V) + np.sqrt(np.sum(gV**2, axis=0))
    out["13-3-46"] = ConditionResult(bool(s.min() >= eps0), float(s.min()))
    grad, hess = vf_grad_hess(model, X, model.tau)
    gn = np.sqrt(np.sum(grad**2, axis=0))
    out["13-3-54"] = ConditionResult(bool(gn.min() >= eps0), float(gn.min()))
    det = np.abs(np.linalg.det(np.moveaxis(hess.reshape(d, d, -1), -1, 0))).reshape(gn.shape)
    crit = gn <= eps
    if np.any(crit):
        worst = float(det[crit].min())
        out["13-6-100"] = ConditionResult(worst >= eps, worst, f"{int(crit.sum())} near-critical nodes")
    else:
        out["13-6-100"] = ConditionResult(True, math.inf, "no near-critical nodes")
    if d == 3:
        out.update(_trapping_conditions(model, grid, eps0, z0_fn))
    return out


def _trapping_conditions(model, grid, eps0, z0_fn):
    from .action import minimize_z0

    z0_fn = z0_fn or (lambda xp: minimize_z0(model, xp))
    C0 = model.C0
    x1, x2 = grid[0], grid[1]
    P = np.stack(np.meshgrid(x1, x2, indexing="ij"))
    inside = P[0] ** 2 + P[1] ** 2 < 1
    if not np.any(inside):
        inside = np.ones_like(P[0], dtype=bool)
    pts = P[:, inside]
    res = {}
    z_out = np.concatenate([np.linspace(C0, C0 + 1, 5), -np.linspace(C0, C0 + 1, 5)])
    qv = np.stack([model.num.q(pts[0], pts[1], np.full(pts.shape[1], z))[0] for z in z_out])
    res["13-6-89"] = ConditionResult(bool(qv.min() > 0), float(qv.min()), f"|x3| >= C0 = {C0}")
    z0 = np.asarray(z0_fn(pts.T), dtype=float).reshape(-1)
    zs = np.linspace(-C0, C0, 33)
    ratios = []
    for z in zs:
        dz = z - z0
        ok = np.abs(dz) > 1e-6
        if np.any(ok):
            r = model.num.dq3(pts[0][ok], pts[1][ok], np.full(ok.sum(), z))[0] / dz[ok]
            ratios.append(r)
    ratios = np.concatenate(ratios)
    lo, hi = float(ratios.min()), float(ratios.max())
    res["13-6-90"] = ConditionResult(
        lo >= eps0 and hi <= C0 * (1 + 1e-9), lo, f"ratio in [{lo:.4g}, {hi:.4g}], C0 = {C0}"
    )
    return res
