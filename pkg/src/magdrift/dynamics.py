"""Classical dynamics: Hamiltonian flow, drift lines, magnetic lines, billiards."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import FieldHazard, GrazingIncidence, IntegrationError, NoOscillation
from .model import (
    ModelSpec,
    field_vector_3d,
    pseudoscalar,
    scalar_intensity,
    sqrt_g,
    vector_norm,
    vf_grad_hess,
)

SAMPLES_PER_PERIOD = 64


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))
        if self.x.shape != self.xi.shape or not (
            np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.xi))
        ):
            raise ValueError("phase point needs finite x and xi of equal length")

    @property
    def state(self) -> np.ndarray:
        return np.concatenate([self.x, self.xi])


@dataclass
class ReflectionEvent:
    t_hit: float
    p_in: PhasePoint
    p_out: PhasePoint
    rho: float
    sigma: float
    rho_out: float
    sigma_out: float
    xbar: np.ndarray
    xbar_out: np.ndarray
    l_cos: float

    @property
    def xbar2_jump(self) -> float:
        return float(self.xbar_out[1] - self.xbar[1])


@dataclass
class Trajectory:
    times: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    energies: np.ndarray
    events: list = field(default_factory=list)

    @property
    def points(self) -> list[PhasePoint]:
        return [PhasePoint(a, b) for a, b in zip(self.x, self.xi)]

    @property
    def energy_drift(self) -> float:
        e0 = self.energies[0]
        return float(np.max(np.abs(self.energies - e0)) / max(1.0, abs(e0)))

    def write_csv(self, path) -> None:
        d = self.x.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *[f"x{j + 1}" for j in range(d)], *[f"xi{j + 1}" for j in range(d)], "energy"])
            for t, x, xi, e in zip(self.times, self.x, self.xi, self.energies):
                w.writerow([repr(float(v)) for v in (t, *x, *xi, e)])

    def write_events_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "rho", "sigma", "rho'", "sigma'", "l", "xbar2_jump"])
            for ev in self.events:
                w.writerow([repr(float(v)) for v in (
                    ev.t_hit, ev.rho, ev.sigma, ev.rho_out, ev.sigma_out, ev.l_cos, ev.xbar2_jump)])


def hamiltonian(model: ModelSpec, p: PhasePoint) -> float:
    """Classical symbol ``sum g^{jk} P_j P_k + V`` (minus ``mu h F`` for Pauli)."""
    return float(model.num.symbol(*p.x, *p.xi))


def kinetic_momentum(model: ModelSpec, x, xi) -> np.ndarray:
    """``xi - mu V(x)`` for points with coordinates along the last axis."""
    x = np.asarray(x, dtype=float)
    A = model.num.A(*np.moveaxis(x, -1, 0))
    return np.asarray(xi, dtype=float) - model.mu * np.moveaxis(A, 0, -1)


def cyclotron_period(model: ModelSpec, x) -> float:
    """Fast gyration period ``pi / (mu F)``."""
    F = float(scalar_intensity(model, np.asarray(x, dtype=float)))
    if F < 1e-12:
        raise FieldHazard("vanishing field: no cyclotron period")
    return math.pi / (model.mu * F)


predicted_period = cyclotron_period


def _energies(model, y):
    d = model.dim
    return np.array([model.num.symbol(*s[:d], *s[d:]) for s in y])


def integrate_flow(
    model: ModelSpec,
    p0: PhasePoint,
    t_end: float,
    tol: float = 1e-9,
    samples_per_period: int = SAMPLES_PER_PERIOD,
) -> Trajectory:
    """Integrate Hamilton's equations with DOP853 and uniform output sampling.

    The step is capped at 1/32 of the cyclotron period.  The relative energy
    drift is the accuracy certificate: the integration is repeated with a
    tighter tolerance until the drift is below ``tol``.
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    e0 = hamiltonian(model, p0)
    if not math.isfinite(e0):
        raise ValueError("hamiltonian is not finite at p0")
    try:
        T = cyclotron_period(model, p0.x)
    except FieldHazard:
        T = t_end / 64
    n = max(int(math.ceil(t_end / T * samples_per_period)), 2) + 1
    t_eval = np.linspace(0.0, t_end, n)
    rtol = min(1e-10, tol * 1e-2)
    for _ in range(4):
        sol = solve_ivp(
            lambda t, y: model.num.hamilton_rhs(y), (0.0, t_end), p0.state,
            method="DOP853", t_eval=t_eval, rtol=rtol, atol=rtol * 1e-2, max_step=T / 32,
        )
        if sol.status != 0:
            raise IntegrationError(sol.message)
        y = sol.y.T
        E = _energies(model, y)
        drift = np.max(np.abs(E - e0)) / max(1.0, abs(e0))
        if drift <= tol:
            break
        rtol /= 100
        if rtol < 1e-15:
            break
    if drift > tol:
        raise IntegrationError(f"energy drift {drift:.3g} exceeds tolerance {tol:.3g}")
    d = model.dim
    return Trajectory(sol.t, y[:, :d], y[:, d:], E)


# -- drift lines and magnetic lines -----------------------------------------------------


@dataclass
class Curve:
    times: np.ndarray
    x: np.ndarray
    terminated: bool = False
    message: str = ""


def drift_line_velocity(model: ModelSpec, x) -> np.ndarray:
    """Right-hand side ``(1/sqrt g)(d_2 Q, -d_1 Q)`` with ``Q = (V - tau)/f``."""
    x = np.asarray(x, dtype=float)
    f = pseudoscalar(model, x)
    grad, _ = vf_grad_hess(model, x, model.tau)
    # grad of (V - tau)/F; F = |f| so divide by sign(f)
    gq = grad * np.sign(f)
    return np.array([gq[1], -gq[0]]) / sqrt_g(model, x)


def predicted_drift(model: ModelSpec, x) -> np.ndarray:
    """Guiding-centre velocity of the Hamiltonian flow at ``x`` (2D).

    Equal to ``-drift_line_velocity / mu``: the flow runs along the drift lines
    in the opposite orientation to the drift-line ODE.
    """
    return -drift_line_velocity(model, x) / model.mu


def integrate_drift_line_2d(
    model: ModelSpec, x0, t_end: float, grad_tol: float = 1e-8, rtol: float = 1e-12
) -> Curve:
    """Trace the magnetic drift line through ``x0``; stops at critical points."""
    if model.dim != 2:
        raise ValueError("drift lines are defined for dim 2")
    x0 = np.asarray(x0, dtype=float)
    if float(scalar_intensity(model, x0)) < 1e-12:
        raise FieldHazard("F vanishes at the starting point")

    def gnorm(t, x):
        g, _ = vf_grad_hess(model, x, model.tau)
        return float(np.hypot(g[0], g[1])) - grad_tol

    gnorm.terminal = True
    if gnorm(0, x0) <= 0:
        return Curve(np.array([0.0]), x0[None, :], True, "started at a critical point")
    sol = solve_ivp(
        lambda t, x: drift_line_velocity(model, x), (0.0, t_end), x0,
        method="DOP853", rtol=rtol, atol=1e-14, events=gnorm, dense_output=False,
    )
    if sol.status < 0:
        raise IntegrationError(sol.message)
    term = sol.status == 1
    return Curve(sol.t, sol.y.T, term, "critical point of (V-tau)/F reached" if term else "")


def magnetic_line_velocity(model: ModelSpec, x, omega: Optional[Callable] = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    v = 2 * field_vector_3d(model, x) / scalar_intensity(model, x)
    if omega is not None:
        v = v * omega(x)
    return v


def integrate_magnetic_line_3d(
    model: ModelSpec, x0, t_end: float, omega: Optional[Callable] = None,
    rtol: float = 1e-12, t_eval=None,
) -> Curve:
    """Integral curve of ``(2/F) omega F^j``; ``omega`` defaults to 1."""
    if model.dim != 3:
        raise ValueError("magnetic lines are integrated in dim 3")
    x0 = np.asarray(x0, dtype=float)
    if float(scalar_intensity(model, x0)) < 1e-12:
        raise FieldHazard("F vanishes at the starting point")
    sol = solve_ivp(
        lambda t, x: magnetic_line_velocity(model, x, omega), (0.0, t_end), x0,
        method="DOP853", rtol=rtol, atol=1e-14, t_eval=t_eval,
    )
    if sol.status != 0:
        raise IntegrationError(sol.message)
    return Curve(sol.t, sol.y.T)


# -- guiding centre -----------------------------------------------------------------------


@dataclass
class GuidingCenterSeries:
    window_times: np.ndarray
    centers: np.ndarray
    period_meas: float
    drift_velocity_meas: np.ndarray
    drift_speed_meas: float
    window_length: float


def gyro_phase(traj: Trajectory, model: ModelSpec, window: Optional[int] = None) -> np.ndarray:
    """Unwrapped angle of the transverse kinetic velocity about its mean.

    The mean is taken over the first ``window`` samples (a whole number of
    gyrations when known) so that it does not leak the gyration itself.
    """
    d = model.dim
    pi = kinetic_momentum(model, traj.x, traj.xi)
    X = traj.x.T
    G = model.num.metric(*X).reshape(d, d, -1)
    v = np.einsum("jkn,nk->nj", G, pi)
    if d == 2:
        w = v - v[:window].mean(axis=0)
        return np.unwrap(np.arctan2(w[:, 1], w[:, 0]))
    b = field_vector_3d(model, X)
    b = (b / vector_norm(model, X, b)).T
    g = model.num.lower_metric(*X).reshape(3, 3, -1)
    vb = np.einsum("jkn,nj,nk->n", g, v, b)
    vperp = v - vb[:, None] * b
    vperp = vperp - vperp[:window].mean(axis=0)
    b0 = b[0]
    e1 = np.cross(b0, [1.0, 0.0, 0.0] if abs(b0[0]) < 0.9 else [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(b0, e1)
    return np.unwrap(np.arctan2(vperp @ e2, vperp @ e1))


def guiding_center(traj: Trajectory, model: ModelSpec) -> GuidingCenterSeries:
    """Measured cyclotron period, one-period position averages and drift.

    The period comes from a least-squares fit of the unwrapped gyro-phase; the
    drift velocity is the least-squares slope of the centres against time.  In
    3D the reported speed is the part transverse to the field at the start.
    """
    t = traj.times
    dt = t[1] - t[0]
    phase = gyro_phase(traj, model)
    if abs(phase[-1] - phase[0]) < 2 * math.pi * 3:
        raise NoOscillation("fewer than three gyrations detected")
    period = 2 * math.pi / abs(np.polyfit(t, phase, 1)[0])
    for _ in range(2):
        # re-centre over an integer number of gyrations, then refit
        n_per = int((t[-1] - t[0]) / period)
        window = int(round(n_per * period / dt))
        phase = gyro_phase(traj, model, window)[:window + 1]
        period = 2 * math.pi / abs(np.polyfit(t[:window + 1], phase, 1)[0])
    W = int(round(period / dt))
    if W < 2 or W >= len(t):
        raise NoOscillation("trajectory too short for one gyration window")
    cs = np.vstack([np.zeros(traj.x.shape[1]), np.cumsum(traj.x, axis=0)])
    centers = (cs[W:] - cs[:-W]) / W
    # window of samples [i, i+W) centred at t_i + (W-1) dt / 2
    wt = t[: len(centers)] + (W - 1) * dt / 2
    vel = np.array([np.polyfit(wt, centers[:, j], 1)[0] for j in range(centers.shape[1])])
    if model.dim == 3:
        b = field_vector_3d(model, traj.x[0])
        b = b / np.linalg.norm(b)
        vt = vel - (vel @ b) * b
        speed = float(np.linalg.norm(vt))
    else:
        speed = float(np.linalg.norm(vel))
    return GuidingCenterSeries(wt, centers, period, vel, speed, W * dt)


# -- billiards ----------------------------------------------------------------------------


def billiard_parameters(model: ModelSpec, p: PhasePoint):
    """``(rho, sigma, xbar)`` of the explicit solution family of the half-space model.

    Valid in the gauge ``V = (0, x1, 0)``: ``rho^2 = xi1^2 + (xi2 - mu x1)^2``,
    ``sigma = xi3``, ``xbar1 = xi2/mu``, ``xbar2 = x2 - xi1/mu``.
    """
    mu = model.mu
    x, xi = p.x, p.xi
    rho = math.hypot(xi[0], xi[1] - mu * x[0])
    xbar = np.array([xi[1] / mu, x[1] - xi[0] / mu, x[2]])
    return rho, float(xi[2]), xbar


def _boundary_level(k, x):
    return x[2] - k * x[0]


def reflect(model: ModelSpec, p: PhasePoint):
    """Specular reflection of the momentum across the tangent plane.

    Returns the reflected point and ``l = <n, G pi>/<n, G n>`` with the covector
    normal ``n = (-k, 0, 1)``; the momentum changes by ``-2 l n``.
    """
    k = model.boundary_slope
    n = np.array([-k, 0.0, 1.0])
    G = model.num.metric(*p.x).reshape(3, 3)
    pi = kinetic_momentum(model, p.x, p.xi)
    lam = float(n @ G @ pi) / float(n @ G @ n)
    return PhasePoint(p.x.copy(), p.xi - 2 * lam * n), lam


def billiard_flow(
    model: ModelSpec,
    p0: PhasePoint,
    n_reflections: int,
    tol: float = 1e-9,
    t_max: Optional[float] = None,
    samples_per_period: int = 16,
) -> Trajectory:
    """Flow inside ``{x3 > k x1}`` with specular reflections at the wall."""
    if model.boundary_slope is None:
        raise ValueError("model has no boundary")
    k = model.boundary_slope
    if _boundary_level(k, p0.x) <= 0:
        raise ValueError("p0 must lie strictly inside the domain")
    d = 3
    e0 = hamiltonian(model, p0)
    T = cyclotron_period(model, p0.x)
    rtol = min(1e-11, tol * 1e-2)
    t_max = t_max if t_max is not None else 1e6 * T

    def hit(t, y):
        return _boundary_level(k, y)

    hit.terminal = True
    hit.direction = -1

    times, ys, events = [], [], []
    t0, y0 = 0.0, p0.state
    while len(events) < n_reflections and t0 < t_max:
        span = min(t_max, t0 + 1e3 * T)
        sol = solve_ivp(
            lambda t, y: model.num.hamilton_rhs(y), (t0, span), y0, method="DOP853",
            rtol=rtol, atol=rtol * 1e-2, max_step=T / 32, events=hit, dense_output=True,
        )
        if sol.status < 0:
            raise IntegrationError(sol.message)
        nsamp = max(2, int((sol.t[-1] - t0) / T * samples_per_period))
        ts = np.linspace(t0, sol.t[-1], nsamp, endpoint=False)
        times.append(ts)
        ys.append(sol.sol(ts).T)
        if sol.status == 0:
            t0, y0 = sol.t[-1], sol.y[:, -1]
            continue
        th, yh = _refine_hit(sol.sol, k, t0, float(sol.t_events[0][0]))
        p_in = PhasePoint(yh[:d], yh[d:])
        v = model.num.hamilton_rhs(yh)[:d]
        n = np.array([-k, 0.0, 1.0])
        if abs(n @ v) < tol * max(1.0, np.linalg.norm(v)):
            raise GrazingIncidence(f"grazing hit at t = {th:.6g}")
        p_out, lam = reflect(model, p_in)
        rho, sigma, xbar = billiard_parameters(model, p_in)
        rho2, sigma2, xbar2 = billiard_parameters(model, p_out)
        events.append(ReflectionEvent(th, p_in, p_out, rho, sigma, rho2, sigma2, xbar, xbar2, lam))
        times.append(np.array([th]))
        ys.append(p_out.state[None, :])
        t0, y0 = th, p_out.state
    t = np.concatenate(times)
    y = np.vstack(ys)
    E = _energies(model, y)
    traj = Trajectory(t, y[:, :d], y[:, d:], E, events)
    if traj.energy_drift > tol * 10:
        raise IntegrationError(f"energy drift {traj.energy_drift:.3g} too large")
    return traj


def _refine_hit(dense, k, t_lo, t_ev, level_tol=1e-12):
    """Bisect the dense output so that the returned point is inside and within
    ``level_tol`` of the wall."""
    a = max(t_lo, t_ev - 1e-6)
    b = t_ev
    fa = _boundary_level(k, dense(a))
    if fa < 0:
        a = t_lo
        fa = _boundary_level(k, dense(a))
    yb = dense(b)
    if _boundary_level(k, yb) > 0:
        # event already on the inside: step forward until outside
        step = 1e-9
        while _boundary_level(k, dense(b + step)) > 0 and step < 1e-3:
            step *= 2
        a, b = b, b + step
    for _ in range(200):
        m = 0.5 * (a + b)
        ym = dense(m)
        fm = _boundary_level(k, ym)
        if fm > 0:
            a = m
            if fm <= level_tol:
                break
        else:
            b = m
        if b - a < 1e-16 * max(1.0, abs(b)):
            break
    return a, dense(a)


@dataclass
class WobbleSummary:
    xbar2_jumps: np.ndarray
    sigma_jumps: np.ndarray
    l_values: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray


def wobble_statistics(traj: Trajectory) -> WobbleSummary:
    """Per-reflection jumps of ``xbar2`` and ``sigma`` with running moments of
    the cumulative ``xbar2`` displacement."""
    if len(traj.events) < 2:
        raise ValueError("need at least two reflection events")
    jx = np.array([e.xbar2_jump for e in traj.events])
    js = np.array([e.sigma_out - e.sigma for e in traj.events])
    lv = np.array([e.l_cos for e in traj.events])
    cum = np.cumsum(jx)
    n = np.arange(1, len(cum) + 1)
    mean = np.cumsum(cum) / n
    var = np.cumsum(cum**2) / n - mean**2
    return WobbleSummary(jx, js, lv, mean, np.maximum(var, 0.0))
