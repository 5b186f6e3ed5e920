"""Built-in solvable models.

Every entry is a factory ``name -> ModelSpec`` taking keyword parameters.  The
planar models use the symmetric gauge ``V = (-x2/2, x1/2)`` (``F_12 = 1``); the
trapping models of the 3D catalog use ``V = (x2/2, -x1/2, 0)`` as in the
symbol ``(xi1 - mu x2/2)^2 + (xi2 + mu x1/2)^2 + V(x)``.
"""
from __future__ import annotations

from typing import Callable

import sympy as sp

from .errors import ConfigError
from .model import ModelSpec, coords, euclidean


def _sym(value):
    return sp.nsimplify(value) if isinstance(value, (int, float)) else sp.sympify(value)


def _planar(V, **kw) -> ModelSpec:
    x1, x2 = coords(2)
    return ModelSpec(
        dim=2, metric=euclidean(2), vecpot=(-x2 / 2, x1 / 2), scalpot=V, **kw
    )


def _trap(V, **kw) -> ModelSpec:
    x1, x2, x3 = coords(3)
    return ModelSpec(
        dim=3, metric=euclidean(3), vecpot=(x2 / 2, -x1 / 2, sp.Integer(0)), scalpot=V, **kw
    )


def ex_13_6_3_i(mu=1.0, h=1.0, tau=0.0, **kw):
    x1, x2 = coords(2)
    return _planar(x2, mu=mu, hplanck=h, tau=tau, name="ex-13-6-3-i", **kw)


def ex_13_6_3_ii(sign=1, mu=1.0, h=1.0, tau=0.0, **kw):
    x1, x2 = coords(2)
    name = "ex-13-6-3-ii+" if sign > 0 else "ex-13-6-3-ii-"
    return _planar(sign * (x1**2 + x2**2), mu=mu, hplanck=h, tau=tau, name=name, **kw)


def ex_13_6_3_iii(mu=1.0, h=1.0, tau=0.0, **kw):
    x1, x2 = coords(2)
    return _planar(x1 * x2, mu=mu, hplanck=h, tau=tau, name="ex-13-6-3-iii", **kw)


def ex_13_6_34_i(k=1, l=1, tau=1, mu=1.0, h=1.0, **kw):
    x1, x2, x3 = coords(3)
    k, l, t = _sym(k), _sym(l), _sym(tau)
    return _trap(
        k**2 * x3**2 + l * x1 - t, mu=mu, hplanck=h, name="ex-13-6-34-i",
        params={"k": float(k), "l": float(l), "tau": float(t)}, **kw,
    )


def ex_13_6_34_ii(k=1, l1=1, l2=1, tau=1, mu=1.0, h=1.0, **kw):
    x1, x2, x3 = coords(3)
    k, a, b, t = _sym(k), _sym(l1), _sym(l2), _sym(tau)
    return _trap(
        k**2 * x3**2 + a * x1**2 + b * x2**2 - t, mu=mu, hplanck=h, name="ex-13-6-34-ii",
        params={"k": float(k), "l1": float(a), "l2": float(b), "tau": float(t)}, **kw,
    )


def ex_13_6_34_iv(k=1, tau=1, mu=1.0, h=1.0, **kw):
    x1, x2, x3 = coords(3)
    k, t = _sym(k), _sym(tau)
    return _trap(
        k**2 * x3**2 - t, mu=mu, hplanck=h, name="ex-13-6-34-iv",
        params={"k": float(k), "tau": float(t)}, **kw,
    )


def ex_13_6_36(alpha="rho**2/2", w="rho**2", tau=2, mu=1.0, h=1.0, **kw):
    """Field lines are circles around the x3 axis; ``alpha`` and ``w`` are
    expressions in ``rho = |x'|``."""
    x1, x2, x3 = coords(3)
    rho = sp.Symbol("rho", nonnegative=True)
    a = sp.sympify(alpha, locals={"rho": rho})
    ww = sp.sympify(w, locals={"rho": rho})
    r = sp.sqrt(x1**2 + x2**2)
    A3 = sp.expand(a.subs(rho, r))
    V = sp.expand(ww.subs(rho, r)) - _sym(tau)
    kw.setdefault("domain", ((0.25, 1.25), (0.25, 1.25), (-1.0, 1.0)))
    return ModelSpec(
        dim=3, metric=euclidean(3), vecpot=(sp.Integer(0), sp.Integer(0), A3), scalpot=V,
        mu=mu, hplanck=h, name="ex-13-6-36",
        params={"alpha": str(alpha), "w": str(w), "tau": float(tau)}, **kw,
    )


def ex_13_7_12(k=0.0, gravity=1.0, mu=1.0, h=1.0, **kw):
    """Half-space billiard ``x3 > k x1`` for ``1/2(xi1^2 + (xi2 - mu x1)^2 + xi3^2)``.

    ``gravity`` adds ``gravity * x3`` so that trajectories keep returning to the
    wall; it is parallel to the field and produces no drift.
    """
    x1, x2, x3 = coords(3)
    return ModelSpec(
        dim=3, metric=euclidean(3, sp.Rational(1, 2)), vecpot=(sp.Integer(0), x1, sp.Integer(0)),
        scalpot=_sym(gravity) * x3, mu=mu, hplanck=h, boundary_slope=float(k),
        name="ex-13-7-12", params={"k": float(k), "gravity": float(gravity)}, **kw,
    )


def uniform_3d(strength=1, mu=1.0, h=1.0, **kw):
    """Constant field ``(0, 0, strength)`` with zero electric potential."""
    x1, x2, x3 = coords(3)
    s = _sym(strength)
    return ModelSpec(
        dim=3, metric=euclidean(3), vecpot=(-s * x2 / 2, s * x1 / 2, sp.Integer(0)),
        scalpot=sp.Integer(0), mu=mu, hplanck=h, name="uniform-3d", **kw,
    )


CATALOG: dict[str, Callable[..., ModelSpec]] = {
    "ex-13-6-3-i": ex_13_6_3_i,
    "ex-13-6-3-ii+": lambda **kw: ex_13_6_3_ii(sign=1, **kw),
    "ex-13-6-3-ii-": lambda **kw: ex_13_6_3_ii(sign=-1, **kw),
    "ex-13-6-3-iii": ex_13_6_3_iii,
    "ex-13-6-34-i": ex_13_6_34_i,
    "ex-13-6-34-ii": ex_13_6_34_ii,
    "ex-13-6-34-iv": ex_13_6_34_iv,
    "ex-13-6-36": ex_13_6_36,
    "ex-13-7-12": ex_13_7_12,
    "uniform-3d": uniform_3d,
}


def build(name: str, **params) -> ModelSpec:
    try:
        factory = CATALOG[name]
    except KeyError:
        raise ConfigError(f"unknown catalog model {name!r}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name}: {exc}") from None
