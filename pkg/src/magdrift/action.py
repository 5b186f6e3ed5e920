"""One-dimensional wells along magnetic lines: turning points, action, period.

Everything here is vectorised over transversal points ``xp`` of shape
``(..., 2)``.  The magnetic lines of the catalog trapping models are parallel
to the x3 axis, so the line through ``x'`` is parametrised by ``x3`` and the
arclength element is ``sqrt(g_33) dx3``.  Lines of other shapes are handled by
:func:`eta_along_line`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import roots_legendre

from .errors import MultipleMinima, NonVerticalLine, QuadratureError
from .model import ModelSpec, field_vector_3d, scalar_intensity

GOLDEN = (math.sqrt(5) - 1) / 2
MAX_NODES = 2**16


@lru_cache(maxsize=None)
def _legendre(n: int):
    t, w = roots_legendre(n)
    return t, w


def _as_points(xp):
    xp = np.asarray(xp, dtype=float)
    if xp.shape[-1] != 2:
        raise ValueError("transversal points need two coordinates")
    return xp


def _q(model, x1, x2, z):
    return model.num.q(x1, x2, z)[0]


def _check_vertical(model, x1, x2, z):
    X = np.stack(np.broadcast_arrays(x1, x2, z))
    Fv = field_vector_3d(model, X)
    F = scalar_intensity(model, X)
    if np.any(np.hypot(Fv[0], Fv[1]) > 1e-10 * np.maximum(F, 1e-300)):
        raise NonVerticalLine(
            "magnetic line is not parallel to x3 here; use eta_along_line"
        )


def minimize_z0(model: ModelSpec, xp, check: bool = True) -> np.ndarray:
    """Minimiser of ``(V/F)(x', .)`` on ``[-C0, C0]``.

    Golden-section search followed by a Newton polish on ``d_3(V/F)``.  With
    ``check`` the sign pattern of ``d_3(V/F)`` on a sample grid must change at
    most once, otherwise :class:`MultipleMinima` is raised.
    """
    xp = _as_points(xp)
    x1, x2 = xp[..., 0], xp[..., 1]
    C0 = model.C0
    a = np.full(x1.shape, -C0)
    b = np.full(x1.shape, C0)
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = _q(model, x1, x2, c), _q(model, x1, x2, d)
    for _ in range(90):
        left = fc < fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c_new = b - GOLDEN * (b - a)
        d_new = a + GOLDEN * (b - a)
        c = np.where(left, c_new, d)
        d = np.where(left, c, d_new)
        fc_old, fd_old = fc, fd
        fd = np.where(left, fc_old, _q(model, x1, x2, d))
        fc = np.where(left, _q(model, x1, x2, c), fd_old)
        if np.all(b - a < 1e-13):
            break
    z = 0.5 * (a + b)
    for _ in range(4):
        g = model.num.dq3(x1, x2, z)[0]
        h = model.num.d2q3(x1, x2, z)[0]
        step = np.where(h > 0, g / np.where(h > 0, h, 1.0), 0.0)
        z = np.clip(z - step, -C0, C0)
    if check:
        zs = np.linspace(-C0, C0, 129)
        s = np.sign(np.stack([model.num.dq3(x1, x2, np.full(x1.shape, zz))[0] for zz in zs]))
        s = np.broadcast_to(s, (len(zs),) + x1.shape).reshape(len(zs), -1).copy()
        for i in range(1, len(zs)):
            # exact zeros inherit the previous sign so crossings through 0 count
            s[i] = np.where(s[i] == 0, s[i - 1], s[i])
        changes = np.sum(s[1:] * s[:-1] < 0, axis=0)
        if np.any(changes > 1):
            raise MultipleMinima("d_3(V/F) changes sign more than once along the line")
    return z


def rbar(model: ModelSpec, xp, z0=None) -> np.ndarray:
    """Largest Landau parameter with an open well: ``-(V/F)(x', z0)``."""
    xp = _as_points(xp)
    z0 = minimize_z0(model, xp) if z0 is None else z0
    return -_q(model, xp[..., 0], xp[..., 1], z0)


@dataclass
class TurningData:
    z0: np.ndarray
    rbar: np.ndarray
    zminus: np.ndarray
    zplus: np.ndarray
    level_r: np.ndarray
    open: np.ndarray


def _well_fn(model, x1, x2, r, level):
    num = model.num

    def g(z):
        return num.V(x1, x2, z)[0] + r * num.F(x1, x2, z)[0] - level

    def dg(z):
        return num.dV3(x1, x2, z)[0] + r * num.dF3(x1, x2, z)[0]

    return g, dg


def _bisect(g, dg, lo, hi, inside_at_hi: bool):
    """Root of ``g`` on ``[lo, hi]`` where ``g > 0`` on the outside end."""
    a, b = lo.copy(), hi.copy()
    for _ in range(200):
        m = 0.5 * (a + b)
        gm = g(m)
        out = gm > 0
        if inside_at_hi:
            a = np.where(out, m, a)
            b = np.where(out, b, m)
        else:
            b = np.where(out, m, b)
            a = np.where(out, a, m)
        if np.all(np.abs(b - a) <= 1e-15 * np.maximum(1.0, np.abs(m))):
            break
    z = 0.5 * (a + b)
    for _ in range(3):
        d = dg(z)
        zn = z - g(z) / np.where(d != 0, d, np.inf)
        ok = (zn >= lo) & (zn <= hi) & (np.abs(g(zn)) <= np.abs(g(z)))
        z = np.where(ok, zn, z)
    return z


def level_crossings(model: ModelSpec, xp, r, level=0.0, z0=None):
    """Roots of ``V + rF = level`` on either side of ``z0`` (bisection + Newton)."""
    xp = _as_points(xp)
    x1, x2 = xp[..., 0], xp[..., 1]
    z0 = minimize_z0(model, xp) if z0 is None else z0
    r = np.broadcast_to(np.asarray(r, dtype=float), x1.shape)
    level = np.broadcast_to(np.asarray(level, dtype=float), x1.shape)
    g, dg = _well_fn(model, x1, x2, r, level)
    C0 = model.C0
    zl = _bisect(g, dg, np.full(x1.shape, -C0), np.asarray(z0, dtype=float), inside_at_hi=True)
    zr = _bisect(g, dg, np.asarray(z0, dtype=float), np.full(x1.shape, C0), inside_at_hi=False)
    return zl, zr


def turning_points(model: ModelSpec, xp, r, check_vertical: bool = True) -> TurningData:
    """Turning points ``z-`` < ``z0`` < ``z+`` of the well ``V + rF < 0``.

    Closed wells (``r >= rbar``) come back with ``open`` False and both
    turning points equal to ``z0``.
    """
    xp = _as_points(xp)
    x1, x2 = xp[..., 0], xp[..., 1]
    z0 = minimize_z0(model, xp)
    if check_vertical:
        _check_vertical(model, x1, x2, z0)
    rb = rbar(model, xp, z0)
    r = np.broadcast_to(np.asarray(r, dtype=float), x1.shape)
    is_open = r < rb
    zl, zr = level_crossings(model, xp, r, 0.0, z0)
    zl = np.where(is_open, zl, z0)
    zr = np.where(is_open, zr, z0)
    return TurningData(z0, rb, zl, zr, r, is_open)


def _well_quadrature(model, xp, r, kind, rtol, td=None, atol=1e-300):
    xp = _as_points(xp)
    x1, x2 = xp[..., 0], xp[..., 1]
    td = turning_points(model, xp, r) if td is None else td
    mid = 0.5 * (td.zplus + td.zminus)
    half = 0.5 * (td.zplus - td.zminus)
    num = model.num
    rr = td.level_r

    def integrate(n):
        t, w = _legendre(n)
        theta = 0.5 * math.pi * t
        z = mid[..., None] + half[..., None] * np.sin(theta)
        a1, a2, rb = x1[..., None], x2[..., None], rr[..., None]
        W = -(num.V(a1, a2, z)[0] + rb * num.F(a1, a2, z)[0])
        ds = np.sqrt(num.g33(a1, a2, z)[0]) * half[..., None] * np.cos(theta)
        if kind == "eta":
            vals = np.sqrt(np.maximum(W, 0.0)) * ds
        elif kind == "T":
            vals = ds / np.sqrt(np.where(W > 0, W, np.inf))
        else:
            # d/dx_j of eta: the integrand vanishes at the turning points, so
            # only the derivative under the integral remains
            dW = -(num.gradV(a1, a2, z)[:2] + rb * num.gradF(a1, a2, z)[:2])
            dW = np.broadcast_to(dW, (2,) + z.shape)
            jac = half[..., None] * np.cos(theta)
            vals = dW * ds / (2 * np.sqrt(np.where(W > 0, W, np.inf)))
            vals = vals + np.sqrt(np.maximum(W, 0.0)) * num.dsqrtg33(a1, a2, z) * jac
            return np.moveaxis(0.5 * math.pi * np.sum(vals * w, axis=-1), 0, -1)
        return 0.5 * math.pi * np.sum(vals * w, axis=-1)

    n = 16
    prev = integrate(n)
    while True:
        n *= 2
        cur = integrate(n)
        err = np.abs(cur - prev)
        scale = np.maximum(np.abs(cur), atol)
        if np.all(err <= rtol * scale) or n >= MAX_NODES:
            break
        prev = cur
    if np.any(err > rtol * scale * 10):
        raise QuadratureError(f"{kind} quadrature did not converge with {n} nodes")
    return cur, td


def eta(model: ModelSpec, xp, r, rtol: float = 1e-9) -> np.ndarray:
    """Action ``int (-V - F r)^{1/2} ds`` over the well; 0 for closed wells.

    The substitution ``z = mid + half * sin(theta)`` removes the square-root
    endpoint behaviour; Gauss-Legendre nodes are doubled until the relative
    change is below ``rtol``.
    """
    val, td = _well_quadrature(model, xp, r, "eta", rtol)
    return np.where(td.open, val, 0.0)


def period_T(model: ModelSpec, xp, r, rtol: float = 1e-9) -> np.ndarray:
    """Oscillation period ``int ds / sqrt(-V - F r)`` over the well.

    Wells within 1e-10 of closing return the small-oscillation limit
    ``pi / sqrt(W''/2)``; closed wells return nan.
    """
    xp = _as_points(xp)
    td = turning_points(model, xp, r)
    val, _ = _well_quadrature(model, xp, r, "T", rtol, td)
    degenerate = td.open & (td.rbar - td.level_r < 1e-10)
    if np.any(degenerate):
        x1, x2 = xp[..., 0], xp[..., 1]
        F0 = model.num.F(x1, x2, td.z0)[0]
        curv = model.num.d2q3(x1, x2, td.z0)[0] * F0
        g33 = model.num.g33(x1, x2, td.z0)[0]
        limit = math.pi * np.sqrt(g33) / np.sqrt(np.maximum(curv / 2, 1e-300))
        val = np.where(degenerate, limit, val)
    return np.where(td.open, val, np.nan)


def eta_gradient(model: ModelSpec, xp, r, rtol: float = 1e-9) -> np.ndarray:
    """``grad_x' eta`` by differentiating under the integral:
    ``-1/2 int (d_j V + r d_j F) / sqrt(-V - F r) ds`` (plus the metric term).

    The endpoint singularity is integrable and handled by the same sine
    substitution as :func:`period_T`.  Closed wells return 0.
    """
    xp = _as_points(xp)
    td = turning_points(model, xp, r)
    val, _ = _well_quadrature(model, xp, r, "grad", rtol, td, atol=1e-12)
    return np.where(td.open[..., None], val, 0.0)


def eta_along_line(model: ModelSpec, x0, r: float, t_max: float = 100.0, n: int = 4096) -> float:
    """Action over a closed magnetic line through ``x0``.

    The line is traced at unit speed; its length is the first return to the
    plane through ``x0`` normal to the field, located by an event on the
    dense output.  The periodic integrand ``(-V - F r)_+^{1/2}`` is then
    integrated by the trapezoidal rule.
    """
    from .dynamics import magnetic_line_velocity

    x0 = np.asarray(x0, dtype=float)
    b0 = magnetic_line_velocity(model, x0) / 2
    rhs = lambda t, x: magnetic_line_velocity(model, x) / 2

    def back(t, x):
        return float((x - x0) @ b0)

    back.direction = 1
    sol = solve_ivp(rhs, (0.0, t_max), x0, method="DOP853", rtol=1e-12, atol=1e-14,
                    events=back, dense_output=True)
    hits = [t for t in sol.t_events[0] if t > 1e-6
            and np.linalg.norm(sol.sol(t) - x0) < 1e-6 * max(1.0, np.linalg.norm(x0))]
    if not hits:
        raise ValueError("magnetic line through x0 is not closed within t_max")
    L = float(hits[0])
    s = np.linspace(0.0, L, n, endpoint=False)
    X = sol.sol(s)
    W = -(model.num.V(*X)[0] + r * model.num.F(*X)[0])
    return float(np.sum(np.sqrt(np.maximum(W, 0.0))) * L / n)


# -- derivatives in x' ------------------------------------------------------------------


def _fd_grad(f, xp, s):
    e1 = np.array([s, 0.0])
    e2 = np.array([0.0, s])
    return np.stack([(f(xp + e1) - f(xp - e1)) / (2 * s), (f(xp + e2) - f(xp - e2)) / (2 * s)], axis=-1)


def _fd_hess(f, xp, s, f0=None):
    e1 = np.array([s, 0.0])
    e2 = np.array([0.0, s])
    f0 = f(xp) if f0 is None else f0
    h11 = (f(xp + e1) - 2 * f0 + f(xp - e1)) / s**2
    h22 = (f(xp + e2) - 2 * f0 + f(xp - e2)) / s**2
    h12 = (f(xp + e1 + e2) - f(xp + e1 - e2) - f(xp - e1 + e2) + f(xp - e1 - e2)) / (4 * s**2)
    return np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)


@dataclass
class EtaDerivatives:
    grad: np.ndarray
    hess: np.ndarray
    noisy: np.ndarray


def eta_grad_hess(
    model: ModelSpec, xp, r, step: float = 1e-4, hess_step: float = 1e-2, noise_tol: float = 1e-4
) -> EtaDerivatives:
    """Gradient and Hessian of ``eta(., r)`` by central differences with one
    Richardson level.

    The Hessian uses the larger ``hess_step``: second differences at 1e-4
    amplify quadrature noise by 1e8.  ``noisy`` marks points where the two
    Richardson estimates of the gradient disagree by more than ``noise_tol``
    (relative).
    """
    xp = _as_points(xp)
    f = lambda p: eta(model, p, r, rtol=1e-13)
    g1 = _fd_grad(f, xp, step)
    g2 = _fd_grad(f, xp, step / 2)
    grad = (4 * g2 - g1) / 3
    f0 = f(xp)
    H1 = _fd_hess(f, xp, hess_step, f0)
    H2 = _fd_hess(f, xp, hess_step / 2, f0)
    hess = (4 * H2 - H1) / 3
    scale = np.maximum(np.linalg.norm(grad, axis=-1), 1e-8)
    noisy = np.linalg.norm(g2 - grad, axis=-1) > noise_tol * scale
    return EtaDerivatives(grad, hess, noisy)


# -- grids and condition classification ------------------------------------------------


@dataclass
class ActionGrid:
    x1: np.ndarray
    x2: np.ndarray
    r_values: np.ndarray
    eta: np.ndarray  # (nr, n1, n2)
    period: np.ndarray
    grad_eta: np.ndarray  # (nr, n1, n2, 2)
    hess_eta: np.ndarray  # (nr, n1, n2, 2, 2)
    valid: np.ndarray  # open well over the whole stencil
    noisy: np.ndarray
    flags: dict = field(default_factory=dict)

    @property
    def points(self) -> np.ndarray:
        return np.stack(np.meshgrid(self.x1, self.x2, indexing="ij"), axis=-1)

    @property
    def cell_area(self) -> float:
        d1 = (self.x1[-1] - self.x1[0]) / max(len(self.x1) - 1, 1)
        d2 = (self.x2[-1] - self.x2[0]) / max(len(self.x2) - 1, 1)
        return float(d1 * d2)

    def write_csv(self, path) -> None:
        P = self.points
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "r", "eta", "T", "deta1", "deta2", "h11", "h12", "h22", "flags"])
            for k, r in enumerate(self.r_values):
                for i in range(len(self.x1)):
                    for j in range(len(self.x2)):
                        g = self.grad_eta[k, i, j]
                        H = self.hess_eta[k, i, j]
                        fl = []
                        if not self.valid[k, i, j]:
                            fl.append("closed")
                        if self.noisy[k, i, j]:
                            fl.append("noisy")
                        w.writerow([repr(float(v)) for v in (
                            P[i, j, 0], P[i, j, 1], r, self.eta[k, i, j], self.period[k, i, j],
                            g[0], g[1], H[0, 0], H[0, 1], H[1, 1])] + ["|".join(fl)])


def build_action_grid(
    model: ModelSpec, x1, x2, r_values, step: float = 1e-4, hess_step: float = 1e-2,
    closure_margin: float = 1e-8,
) -> ActionGrid:
    """Evaluate ``eta``, ``T``, ``grad eta`` and ``Hess eta`` on a tensor grid.

    A cell is ``valid`` when the well stays open (``r < rbar - closure_margin``)
    at every point of its finite-difference stencil.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    P = np.stack(np.meshgrid(x1, x2, indexing="ij"), axis=-1)
    rs = np.atleast_1d(np.asarray(r_values, dtype=float))
    offs = [(0, 0)] + [(a * s, b * s) for s in (hess_step, hess_step / 2) for a in (-1, 0, 1)
                       for b in (-1, 0, 1) if (a, b) != (0, 0)]
    rb_stencil = np.min(np.stack([rbar(model, P + np.array(o)) for o in offs]), axis=0)
    out = {k: [] for k in ("eta", "T", "g", "H", "valid", "noisy")}
    for r in rs:
        valid = r < rb_stencil - closure_margin
        e = eta(model, P, r)
        with np.errstate(invalid="ignore"):
            T = period_T(model, P, r)
        g = np.zeros(P.shape)
        H = np.zeros(P.shape + (2,))
        noisy = np.zeros(P.shape[:-1], dtype=bool)
        if np.any(valid):
            der = eta_grad_hess(model, P[valid], r, step, hess_step)
            g[valid], H[valid], noisy[valid] = der.grad, der.hess, der.noisy
        for k, v in zip(("eta", "T", "g", "H", "valid", "noisy"), (e, T, g, H, valid, noisy)):
            out[k].append(v)
    return ActionGrid(
        x1, x2, rs, np.array(out["eta"]), np.array(out["T"]), np.array(out["g"]),
        np.array(out["H"]), np.array(out["valid"]), np.array(out["noisy"]),
    )


@dataclass(frozen=True)
class Verdict:
    holds: bool
    margin: float
    detail: str = ""


def _small_gradient_fraction(gn, det, area, eps):
    """Estimated area fraction of ``{|grad eta| < e}`` for ``e = eps, eps/4``.

    A cell with ``|grad eta| < e`` contributes the area of the linearised
    sublevel ellipse ``pi e^2 / |det Hess|``, capped at the cell area; with a
    degenerate Hessian the whole cell counts and the fraction cannot shrink.
    """
    out = []
    for e in (eps, eps / 4):
        sel = gn < e
        ell = np.pi * e * e / np.maximum(det[sel], 1e-300)
        out.append(float(np.sum(np.minimum(ell, area)) / (area * len(gn))))
    return out


def classify_nondegeneracy(model: ModelSpec, grid: ActionGrid, eps: float = 1e-3) -> list[dict]:
    """Per Landau parameter verdicts for the non-degeneracy conditions on eta.

    * ``13-6-98``: min ``|grad eta|`` over valid cells is at least ``eps``;
    * ``13-6-107``: near-critical cells (``|grad eta| <= eps``) have
      ``|det Hess eta| >= eps``;
    * ``13-6-109``: near-critical cells have largest singular value of
      ``Hess eta`` at least ``eps``;
    * ``13-6-108``: the area fraction of ``{|grad eta| < e}`` shrinks as ``e``
      goes from ``eps`` to ``eps/4``, or is zero.
    """
    out = []
    for k, r in enumerate(grid.r_values):
        v = grid.valid[k]
        if not np.any(v):
            out.append({"r": float(r), "empty": True})
            continue
        gn = np.linalg.norm(grid.grad_eta[k][v], axis=-1)
        H = grid.hess_eta[k][v]
        det = np.abs(np.linalg.det(H))
        sv = np.linalg.norm(H, ord=2, axis=(-2, -1))
        crit = gn <= eps
        res = {"r": float(r), "empty": False}
        res["13-6-98"] = Verdict(bool(gn.min() >= eps), float(gn.min()))
        if np.any(crit):
            res["13-6-107"] = Verdict(bool(det[crit].min() >= eps), float(det[crit].min()),
                                      f"{int(crit.sum())} near-critical cells")
            res["13-6-109"] = Verdict(bool(sv[crit].min() >= eps), float(sv[crit].min()),
                                      "largest singular value of Hess eta")
        else:
            res["13-6-107"] = Verdict(True, math.inf, "no near-critical cells")
            res["13-6-109"] = Verdict(True, math.inf, "no near-critical cells")
        frac, frac4 = _small_gradient_fraction(gn, det, grid.cell_area, eps)
        holds = frac == 0.0 or frac4 <= 0.5 * frac
        res["13-6-108"] = Verdict(holds, frac, f"area fraction {frac:.3g} at eps, {frac4:.3g} at eps/4")
        out.append(res)
    return out


def eta_gradient_norm(model: ModelSpec, xp, r):
    """``|grad eta|`` from :func:`eta_gradient` and a mask of open wells."""
    xp = _as_points(xp)
    valid = r < rbar(model, xp) - 1e-8
    return np.linalg.norm(eta_gradient(model, xp, r), axis=-1), valid


def critical_zone_measure(
    model: ModelSpec, r: float, gammabar: float, box=None, n_coarse: int = 65, n_fine: int = 257,
    max_levels: int = 8,
) -> float:
    """Area of ``{x' : |grad eta(x', r)| <= gammabar}`` by grid counting.

    Each pass marks cells that may belong to the zone (``|grad eta|`` within a
    Lipschitz allowance of ``gammabar``) and recounts on the bounding box of
    the marked cells, until the zone fills a quarter of the box.  Cells with a
    closed well are excluded.
    """
    box = box or (tuple(model.domain[0]), tuple(model.domain[1]))

    def count(b, n):
        (lo1, hi1), (lo2, hi2) = b
        d1, d2 = (hi1 - lo1) / n, (hi2 - lo2) / n
        c1 = lo1 + d1 * (np.arange(n) + 0.5)
        c2 = lo2 + d2 * (np.arange(n) + 0.5)
        P = np.stack(np.meshgrid(c1, c2, indexing="ij"), axis=-1)
        gn, valid = eta_gradient_norm(model, P, r)
        return P, gn, valid, d1, d2

    n = n_coarse
    for level in range(max_levels):
        P, gn, valid, d1, d2 = count(box, n)
        if not np.any(valid):
            return 0.0
        g = np.where(valid, gn, np.nan)
        lip = 0.0
        if g.shape[0] > 1:
            lip = max(lip, np.nanmax(np.abs(np.diff(g, axis=0))) / d1)
        if g.shape[1] > 1:
            lip = max(lip, np.nanmax(np.abs(np.diff(g, axis=1))) / d2)
        lip = lip if np.isfinite(lip) else 0.0
        mark = valid & (gn <= gammabar + lip * math.hypot(d1, d2))
        if not np.any(mark):
            return 0.0
        if np.mean(mark) > 0.25 or level == max_levels - 1:
            if n < n_fine:
                P, gn, valid, d1, d2 = count(box, n_fine)
            return float(np.count_nonzero(valid & (gn <= gammabar)) * d1 * d2)
        pts = P[mark]
        (a1, b1), (a2, b2) = box
        box = ((max(a1, pts[:, 0].min() - d1), min(b1, pts[:, 0].max() + d1)),
               (max(a2, pts[:, 1].min() - d2), min(b2, pts[:, 1].max() + d2)))
        n = n_fine
    raise AssertionError("unreachable")
