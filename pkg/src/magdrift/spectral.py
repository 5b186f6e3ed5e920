"""Landau ladders, exact eigenvalue counts and their semiclassical approximations."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .action import ActionGrid, eta, minimize_z0
from .errors import MagdriftError, NonConfinement
from .model import PAULI, SCHRODINGER, ModelSpec

WKB_DECAY = 20.0
MAX_GRID = 2**15


# -- Sturm sequences ---------------------------------------------------------------------


def sturm_count(diag, off, shifts) -> np.ndarray:
    """Number of eigenvalues strictly below ``shifts`` of symmetric tridiagonal
    matrices.

    ``diag`` has shape ``(..., n)`` and ``off`` shape ``(..., n-1)``; ``shifts``
    broadcasts against the leading axes.  The count is the number of negative
    pivots in the LDL^T factorisation of ``T - shift``.
    """
    diag = np.asarray(diag, dtype=float)
    off = np.asarray(off, dtype=float)
    shifts = np.asarray(shifts, dtype=float)
    lead = np.broadcast_shapes(diag.shape[:-1], shifts.shape)
    n = diag.shape[-1]
    off2 = off**2
    scale = np.max(np.abs(diag), initial=0.0) + 2 * np.max(np.abs(off), initial=0.0) + 1.0
    pivmin = np.finfo(float).tiny * max(scale, 1.0) * 1e10
    count = np.zeros(lead, dtype=np.int64)
    d = np.broadcast_to(diag[..., 0] - shifts, lead).copy()
    for i in range(n):
        if i > 0:
            d = diag[..., i] - shifts - off2[..., i - 1] / d
        d = np.where(np.abs(d) < pivmin, pivmin, d)
        count += d < 0
    return count


def dense_count(diag, off, shift: float) -> int:
    """Brute-force oracle for :func:`sturm_count` via ``eigvalsh``."""
    T = np.diag(np.asarray(diag, float)) + np.diag(off, 1) + np.diag(off, -1)
    return int(np.count_nonzero(np.linalg.eigvalsh(T) < shift))


# -- fibers -------------------------------------------------------------------------------


def _fiber_window(model, x1, x2, r, tau_level, margin):
    """Per-fiber window ``[lo, hi]`` covering the well and its evanescent tails."""
    num = model.num
    C0 = model.C0
    zs = np.linspace(-C0, C0, 513)
    A1, A2 = x1[:, None], x2[:, None]
    W = num.V(A1, A2, zs)[0] + r[:, None] * num.F(A1, A2, zs)[0] - tau_level
    W = np.broadcast_to(W, (len(x1), len(zs)))
    inside = W < 0
    active = inside.any(axis=1)
    if np.any(active & ((W[:, 0] < margin) | (W[:, -1] < margin))):
        raise NonConfinement(
            f"fiber potential below level + {margin} at the ends of [-{C0}, {C0}]"
        )
    dz = zs[1] - zs[0]
    h = model.hplanck
    lo = np.full(len(x1), -C0)
    hi = np.full(len(x1), C0)
    wmin = np.zeros(len(x1))
    for k in np.nonzero(active)[0]:
        idx = np.nonzero(inside[k])[0]
        decay = np.sqrt(np.maximum(W[k], 0.0)) * dz / h
        left = np.cumsum(decay[: idx[0]][::-1])
        right = np.cumsum(decay[idx[-1] + 1 :])
        il = np.nonzero(left >= WKB_DECAY)[0]
        ir = np.nonzero(right >= WKB_DECAY)[0]
        i_lo = idx[0] - 1 - il[0] if len(il) else 0
        i_hi = idx[-1] + 1 + ir[0] if len(ir) else len(zs) - 1
        # keep the potential at the window ends above the level by the margin
        while i_lo > 0 and W[k, i_lo] < margin:
            i_lo -= 1
        while i_hi < len(zs) - 1 and W[k, i_hi] < margin:
            i_hi += 1
        lo[k], hi[k] = zs[i_lo], zs[i_hi]
        wmin[k] = W[k].min()
    return active, lo, hi, wmin


def _fiber_counts_on(model, x1, x2, r, tau_level, lo, hi, n):
    num = model.num
    h2 = model.hplanck**2
    d = (hi - lo) / (n + 1)
    t = np.arange(1, n + 1)
    z = lo[:, None] + d[:, None] * t
    zm = lo[:, None] + d[:, None] * (np.arange(n + 1) + 0.5)
    A1, A2 = x1[:, None], x2[:, None]
    W = num.V(A1, A2, z)[0] + r[:, None] * num.F(A1, A2, z)[0] - tau_level
    g = np.broadcast_to(num.ginv33(A1, A2, zm)[0], zm.shape)
    c = h2 * g / d[:, None] ** 2
    diag = np.broadcast_to(W, z.shape) + c[:, :-1] + c[:, 1:]
    off = -c[:, 1:-1]
    return sturm_count(diag, off, 0.0)


def fiber_count(
    model: ModelSpec, xp, r, tau_level: float = 0.0, grid_n: Optional[int] = None,
    margin: float = 0.5,
):
    """Eigenvalues below ``tau_level`` of ``-h^2 d_3 g^33 d_3 + V + rF`` on the
    fiber over ``xp``.

    Second-order finite differences with Dirichlet ends on a window that covers
    the well plus its tunnelling tails (WKB decay exponent at least 20, and
    ``V + rF - tau_level >= margin`` at the ends).  ``grid_n`` is the starting
    size; it is doubled until the count is unchanged for two consecutive
    doublings.  Vectorised over ``xp`` of shape ``(..., 2)``.
    """
    xp = np.asarray(xp, dtype=float)
    shape = xp.shape[:-1]
    pts = xp.reshape(-1, 2)
    x1, x2 = pts[:, 0], pts[:, 1]
    rr = np.broadcast_to(np.asarray(r, dtype=float), shape).reshape(-1)
    active, lo, hi, wmin = _fiber_window(model, x1, x2, rr, tau_level, margin)
    out = np.zeros(len(x1), dtype=np.int64)
    if np.any(active):
        a = np.nonzero(active)[0]
        if grid_n is None:
            length = np.max(hi[a] - lo[a])
            kmax = math.sqrt(max(-np.min(wmin[a]), 1e-12)) / model.hplanck
            grid_n = int(2 ** math.ceil(math.log2(max(64.0, 12 * length * kmax / (2 * math.pi)))))
        n = grid_n
        hist = [_fiber_counts_on(model, x1[a], x2[a], rr[a], tau_level, lo[a], hi[a], n)]
        while True:
            n *= 2
            hist.append(_fiber_counts_on(model, x1[a], x2[a], rr[a], tau_level, lo[a], hi[a], n))
            if len(hist) >= 3 and np.array_equal(hist[-1], hist[-2]) and np.array_equal(hist[-2], hist[-3]):
                break
            if n >= MAX_GRID:
                warnings.warn("fiber count did not stabilise at the maximal grid size")
                break
        out[a] = hist[-1]
    out = out.reshape(shape)
    return int(out) if out.ndim == 0 else out


def bohr_sommerfeld_count(model: ModelSpec, xp, r):
    """Semiclassical fiber count ``eta(xp, r) / (pi h)`` (no Maslov shift)."""
    val = eta(model, xp, r) / (math.pi * model.hplanck)
    return float(val) if np.ndim(val) == 0 else val


# -- Landau ladder ------------------------------------------------------------------------


@dataclass(frozen=True)
class LandauLadder:
    kind: str
    mu: float
    hplanck: float
    r_values: tuple
    j_max: int


def ladder_values(kind: str, mu: float, h: float, r_max: float) -> tuple:
    """Levels ``(2j+1) mu h`` (Schrodinger) or ``2j mu h`` (Pauli) strictly below
    ``r_max``."""
    step = 2 * mu * h
    first = mu * h if kind == SCHRODINGER else 0.0
    if r_max <= first:
        return ()
    jmax = int(math.floor((r_max - first) / step))
    vals = [first + j * step for j in range(jmax + 1)]
    return tuple(v for v in vals if v < r_max)


def max_rbar(model: ModelSpec, n: int = 33) -> float:
    """Maximum of ``-(V/F)`` at the minimum along each line over the x' box."""
    if model.dim == 2:
        (a1, b1), (a2, b2) = model.domain
        P = np.meshgrid(np.linspace(a1, b1, n), np.linspace(a2, b2, n), indexing="ij")
        return float(np.max(-model.num.q(*P)[0]))
    (a1, b1), (a2, b2) = model.domain[0], model.domain[1]
    P = np.stack(np.meshgrid(np.linspace(a1, b1, n), np.linspace(a2, b2, n), indexing="ij"), -1)
    z0 = minimize_z0(model, P, check=False)
    return float(np.max(-model.num.q(P[..., 0], P[..., 1], z0)[0]))


def landau_ladder(model: ModelSpec, r_max: Optional[float] = None) -> LandauLadder:
    """Landau parameters with an open well somewhere in the box.

    Levels at or above ``max rbar`` give closed wells everywhere and are cut.
    """
    mu, h = model.mu, model.hplanck
    if mu * h <= 0:
        raise MagdriftError("mu h must be positive")
    r_max = max_rbar(model) if r_max is None else r_max
    vals = ladder_values(model.kind, mu, h, r_max)
    return LandauLadder(model.kind, mu, h, vals, len(vals) - 1)


# -- second term --------------------------------------------------------------------------


@dataclass(frozen=True)
class PlaneGrid:
    """Midpoint rule on an ``n x n`` subdivision of a rectangle in x'."""

    box: tuple
    n: int

    @property
    def points(self) -> np.ndarray:
        (a1, b1), (a2, b2) = self.box
        c1 = a1 + (b1 - a1) * (np.arange(self.n) + 0.5) / self.n
        c2 = a2 + (b2 - a2) * (np.arange(self.n) + 0.5) / self.n
        return np.stack(np.meshgrid(c1, c2, indexing="ij"), axis=-1)

    @property
    def cell_area(self) -> float:
        (a1, b1), (a2, b2) = self.box
        return (b1 - a1) * (b2 - a2) / self.n**2


def second_term_integral(
    model: ModelSpec, grid, tau_level: float = 0.0, method: str = "fiber",
    ladder: Optional[LandauLadder] = None,
) -> float:
    """``(2 pi)^-1 mu h^-1 sum_j int n(x'; r_j) dx'`` by quadrature over ``grid``.

    ``grid`` is a :class:`PlaneGrid` or an :class:`ActionGrid` (nodes weighted by
    the cell area).  ``method`` selects the fiber count: ``"fiber"`` (Sturm)
    or ``"bohr_sommerfeld"`` (``eta / (pi h)``).
    """
    if isinstance(grid, ActionGrid):
        P, area = grid.points, grid.cell_area
    else:
        P, area = grid.points, grid.cell_area
    if ladder is None:
        ladder = landau_ladder(model, r_max=max_rbar_on(model, P))
    total = 0.0
    edge = np.zeros(P.shape[:-1], dtype=bool)
    edge[0, :] = edge[-1, :] = edge[:, 0] = edge[:, -1] = True
    touches = False
    for r in ladder.r_values:
        if method == "fiber":
            n = fiber_count(model, P, r, tau_level)
        elif method == "bohr_sommerfeld":
            if tau_level != 0.0:
                raise ValueError("bohr_sommerfeld counts are defined at level 0")
            n = bohr_sommerfeld_count(model, P, r)
        else:
            raise ValueError(f"unknown method {method!r}")
        n = np.asarray(n, dtype=float)
        touches |= bool(np.any(n[edge] > 0))
        total += float(np.sum(n)) * area
    if touches:
        warnings.warn("open wells reach the edge of the quadrature grid; integrand truncated")
    return model.mu / (2 * math.pi * model.hplanck) * total


def max_rbar_on(model: ModelSpec, P) -> float:
    z0 = minimize_z0(model, P, check=False)
    return float(np.max(-model.num.q(P[..., 0], P[..., 1], z0)[0]))


# -- the separable catalog models ---------------------------------------------------------


def _lattice_below(i, j, l, k, mu, h, tau) -> bool:
    return (2 * i + 1) * l * h / mu + (2 * j + 1) * k * h < tau


def lattice_count(l: float, k: float, mu: float, h: float, tau: float) -> int:
    """``#{(i, j) >= 0 : (2i+1) l h / mu + (2j+1) k h < tau}``.

    One closed-form count per row ``j``, corrected against the floating-point
    inequality at the row end.
    """
    if min(l, k, mu, h, tau) <= 0:
        raise ValueError("lattice parameters must be positive")
    a = l * h / mu
    total = 0
    j = 0
    while _lattice_below(0, j, l, k, mu, h, tau):
        rest = tau - (2 * j + 1) * k * h
        m = max(int(math.ceil((rest / a - 1) / 2)), 1)
        while m > 0 and not _lattice_below(m - 1, j, l, k, mu, h, tau):
            m -= 1
        while _lattice_below(m, j, l, k, mu, h, tau):
            m += 1
        total += m
        if total > 2**62:
            raise OverflowError("lattice count exceeds 2**62")
        j += 1
    return total


def lattice_weyl(l: float, k: float, mu: float, h: float, tau: float) -> float:
    """``sum_j mu (tau - (2j+1) k h)_+ / (2 l h)``: the i-sum replaced by its integral."""
    jmax = int(math.floor((tau / (k * h) - 1) / 2)) if tau > k * h else -1
    j = np.arange(jmax + 1)
    return float(np.sum(mu * np.maximum(tau - (2 * j + 1) * k * h, 0.0)) / (2 * l * h))


def _omegas(l: float, mu: float):
    L = l * l
    Om = math.sqrt(mu * mu + 4 * L)
    return Om + mu, 4 * L / (Om + mu)  # (Omega + mu, Omega - mu) without cancellation


def isotropic_exact_count(k: float, l: float, mu: float, h: float, tau: float, kind: str = PAULI) -> int:
    """Eigenvalues below 0 of the operator with ``V = k^2 x3^2 + l^2 |x'|^2 - tau``
    and unit field along x3.

    The planar factor is the Fock-Darwin oscillator with levels
    ``h[(Om+mu)(n1 + 1/2) + (Om-mu)(n2 + 1/2)]``, ``Om = sqrt(mu^2 + 4 l^2)``;
    the x3 factor has levels ``(2m+1) k h``.  The Pauli kind subtracts ``mu h``.
    """
    wp, wm = _omegas(l, mu)
    shift = mu * h if kind == PAULI else 0.0
    total = 0
    m = 0
    while (2 * m + 1) * k * h + h * (wp + wm) / 2 - shift < tau:
        rest = tau + shift - (2 * m + 1) * k * h
        n1 = 0
        while h * wp * (n1 + 0.5) + h * wm * 0.5 < rest:
            X = (rest - h * wp * (n1 + 0.5)) / (h * wm)
            c = max(int(math.ceil(X - 0.5)), 0)
            while c > 0 and not h * wp * (n1 + 0.5) + h * wm * (c - 0.5) < rest:
                c -= 1
            while h * wp * (n1 + 0.5) + h * wm * (c + 0.5) < rest:
                c += 1
            total += c
            n1 += 1
        m += 1
    return total


def isotropic_second_term(k: float, l: float, mu: float, h: float, tau: float, kind: str = PAULI) -> float:
    """Closed form of the second-term integral for the isotropic model:
    ``mu / (2 h l^2) sum_j sum_m (tau - r_j - (2m+1) k h)_+``."""
    L = l * l
    total = 0.0
    for r in ladder_values(kind, mu, h, tau):
        total += lattice_weyl(1.0, k, 1.0, h, tau - r) * 2 * h
    return mu / (2 * h * L) * total


def isotropic_second_term_bs(k: float, l: float, mu: float, h: float, tau: float, kind: str = PAULI) -> float:
    """Second term with Bohr-Sommerfeld fiber counts:
    ``(2 pi^2)^-1 mu h^-2 sum_j int eta dx' = sum_j mu (tau - r_j)_+^2 / (8 k l^2 h^2)``."""
    L = l * l
    return sum(mu * (tau - r) ** 2 / (8 * k * L * h * h) for r in ladder_values(kind, mu, h, tau))


def isotropic_model(k: float, l: float, mu: float, h: float, tau: float, kind: str = PAULI) -> ModelSpec:
    from .catalog import ex_13_6_34_ii

    R = math.sqrt(tau) / l + 0.25
    return ex_13_6_34_ii(
        k=k, l1=l * l, l2=l * l, tau=tau, mu=mu, h=h, kind=kind,
        domain=((-R, R), (-R, R), (-2.0, 2.0)),
    )


def radial_count(
    k: float, l: float, mu: float, h: float, tau: float, kind: str = PAULI,
    n_rho: int = 400, stable: bool = True,
) -> int:
    """Independent count of the isotropic model by angular-momentum sectors.

    Each sector ``q`` is the radial operator
    ``-h^2 rho^-1 (rho R')' + (h^2 q^2 / rho^2 + Om^2 rho^2 / 4 - mu h q) R``,
    discretised by finite volumes on cell centres (the mass matrix ``rho`` is
    symmetrised away) and counted by Sturm sequences at the shifts
    ``tau - (2m+1) k h (+ mu h)``.  Sectors stop once the exact lower bound
    ``h (Om (|q|+1) - mu q)`` exceeds every shift.
    """
    wp, wm = _omegas(l, mu)
    Om = (wp + wm) / 2
    shift = mu * h if kind == PAULI else 0.0
    levels = []
    m = 0
    while (2 * m + 1) * k * h < tau + shift:
        levels.append(tau + shift - (2 * m + 1) * k * h)
        m += 1
    if not levels:
        return 0
    levels = np.array(levels)
    top = levels.max()

    def sector(q, n):
        rho_max = 2.0 * math.sqrt(top + 40 * h * Om) / Om + 1e-12
        rho_max = max(rho_max, 2 * math.sqrt(abs(q)) * math.sqrt(h / Om) * 3)
        d = rho_max / n
        rc = (np.arange(n) + 0.5) * d
        re = np.arange(1, n) * d
        U = h * h * q * q / rc**2 + Om**2 * rc**2 / 4 - mu * h * q
        flux = h * h * re / d**2
        diag = rc * U
        diag[:-1] += flux
        diag[1:] += flux
        diag = diag / rc
        off = -flux / np.sqrt(rc[:-1] * rc[1:])
        return sturm_count(np.broadcast_to(diag, (len(levels), n)),
                           np.broadcast_to(off, (len(levels), n - 1)), levels).sum()

    total = 0
    q = 0
    while True:
        found = False
        for qq in ((q,) if q == 0 else (q, -q)):
            if h * (Om * (abs(qq) + 1) - mu * qq) < top:
                found = True
                n = n_rho
                c = [sector(qq, n)]
                while stable:
                    n *= 2
                    c.append(sector(qq, n))
                    if c[-1] == c[-2] or n >= MAX_GRID:
                        break
                total += int(c[-1])
        if not found:
            break
        q += 1
    return total


# -- results ------------------------------------------------------------------------------


@dataclass
class CountResult:
    mu: float
    hplanck: float
    tau: float
    kind: str
    n_exact: int
    n_approx: float
    method_exact: str
    method_approx: str

    @property
    def remainder(self) -> float:
        return self.n_exact - self.n_approx

    def row(self) -> dict:
        d = asdict(self)
        d["remainder"] = self.remainder
        return d


LEDGER_COLUMNS = ["mu", "h", "tau", "kind", "n_exact", "n_approx", "remainder", "method_exact", "method_approx"]


def write_ledger(rows: Sequence[CountResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LEDGER_COLUMNS)
        for c in rows:
            w.writerow([repr(float(c.mu)), repr(float(c.hplanck)), repr(float(c.tau)), c.kind,
                        int(c.n_exact), repr(float(c.n_approx)), repr(float(c.remainder)),
                        c.method_exact, c.method_approx])
