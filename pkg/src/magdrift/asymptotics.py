"""Parameter sweeps over solvable models and log-log slope fits of remainders."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import spectral
from .errors import ConfigError, InsufficientPoints
from .model import PAULI, SCHRODINGER
from .spectral import CountResult

FLOOR = 0.5
MIN_POINTS = 4


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    intercept: float

    def __iter__(self):
        return iter((self.slope, self.stderr))


def fit_slope(xs, ys) -> SlopeFit:
    """Ordinary least squares of ``log y`` on ``log x``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) < MIN_POINTS:
        raise InsufficientPoints(f"need at least {MIN_POINTS} points, got {len(xs)}")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("log-log fit needs positive data")
    lx = np.log(xs)
    if np.ptp(lx) == 0:
        raise ValueError("degenerate fit: all x equal")
    res = stats.linregress(lx, np.log(ys))
    return SlopeFit(float(res.slope), float(res.stderr), float(res.intercept))


# -- plans --------------------------------------------------------------------------------

EXACT = {
    "lattice": lambda p, mu, h: spectral.lattice_count(p["l"], p["k"], mu, h, p["tau"]),
    "isotropic": lambda p, mu, h: spectral.isotropic_exact_count(p["k"], p["l"], mu, h, p["tau"], p["kind"]),
}


def _quadrature_second_term(p, mu, h):
    m = spectral.isotropic_model(p["k"], p["l"], mu, h, p["tau"], p["kind"])
    (a, b) = m.domain[0]
    grid = spectral.PlaneGrid(((a, b), (a, b)), int(p.get("grid_n", 64)))
    return spectral.second_term_integral(m, grid)


APPROX = {
    "lattice_weyl": lambda p, mu, h: spectral.lattice_weyl(p["l"], p["k"], mu, h, p["tau"]),
    "second_term": lambda p, mu, h: spectral.isotropic_second_term(p["k"], p["l"], mu, h, p["tau"], p["kind"]),
    "second_term_bs": lambda p, mu, h: spectral.isotropic_second_term_bs(p["k"], p["l"], mu, h, p["tau"], p["kind"]),
    "second_term_quadrature": _quadrature_second_term,
}

ENVELOPES = {"h^-1": lambda mu, h: 1.0 / h, "mu^-1": lambda mu, h: 1.0 / mu}


@dataclass(frozen=True)
class SweepPlan:
    template: str
    params: dict
    regime: str
    mu_grid: tuple
    h_grid: tuple
    coupling: str
    method_exact: str
    method_approx: str
    envelope: str
    reference_slope: float
    tolerance: float
    informational: bool = False

    def __post_init__(self):
        if len(self.mu_grid) != len(self.h_grid):
            raise ConfigError("mu_grid and h_grid must have equal length")
        for mu, h in zip(self.mu_grid, self.h_grid):
            if mu < 1 or not 0 < h <= 1:
                raise ConfigError(f"need mu >= 1 and 0 < h <= 1, got mu={mu}, h={h}")
            ok = mu * h <= 1 + 1e-12 if self.regime == "muh_le_1" else mu * h >= 1 - 1e-12
            if self.regime not in ("muh_le_1", "muh_ge_1") or not ok:
                raise ConfigError(f"(mu={mu}, h={h}) violates regime {self.regime}")
        if self.method_exact not in EXACT:
            raise ConfigError(f"unknown exact method {self.method_exact!r}")
        if self.method_approx not in APPROX:
            raise ConfigError(f"unknown approximate method {self.method_approx!r}")
        if self.envelope not in ENVELOPES:
            raise ConfigError(f"unknown envelope {self.envelope!r}")


@dataclass
class SweepReport:
    plan: SweepPlan
    rows: list
    fitted_slope: Optional[float]
    stderr: Optional[float]
    intercept: Optional[float]
    verdict: str
    ratios: list = field(default_factory=list)
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict in ("pass", "vacuous")

    @property
    def remainders(self) -> np.ndarray:
        return np.array([r.remainder for r in self.rows])

    def to_dict(self) -> dict:
        return {
            "plan": asdict(self.plan),
            "rows": [r.row() for r in self.rows],
            "fitted_slope": self.fitted_slope,
            "stderr": self.stderr,
            "intercept": self.intercept,
            "reference_slope": self.plan.reference_slope,
            "tolerance": self.plan.tolerance,
            "verdict": self.verdict,
            "remainder_over_leading": self.ratios,
            "note": self.note,
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _evaluate(plan: SweepPlan, mu: float, h: float) -> CountResult:
    p = plan.params
    n = EXACT[plan.method_exact](p, mu, h)
    a = APPROX[plan.method_approx](p, mu, h)
    return CountResult(mu, h, p["tau"], p.get("kind", PAULI), int(n), float(a),
                       plan.method_exact, plan.method_approx)


def run_sweep(plan: SweepPlan, threads: int = 1) -> SweepReport:
    """Evaluate every grid point and fit ``log|remainder|`` against the envelope.

    Remainders below ``FLOOR`` counts are raised to it before the fit; at
    least four nonzero remainders are required.  All rows exactly zero with
    all counts zero is reported as a vacuous pass.
    """
    pairs = list(zip(plan.mu_grid, plan.h_grid))
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            rows = list(ex.map(lambda mh: _evaluate(plan, *mh), pairs))
    else:
        rows = [_evaluate(plan, mu, h) for mu, h in pairs]
    R = np.array([r.remainder for r in rows])
    lead = np.array([r.n_approx for r in rows])
    ratios = [float(abs(r) / a) if a > 0 else 0.0 for r, a in zip(R, lead)]
    if np.all(R == 0) and all(r.n_exact == 0 for r in rows):
        return SweepReport(plan, rows, None, None, None, "vacuous", ratios,
                           "no eigenvalues below the level at any grid point")
    nonzero = np.count_nonzero(np.abs(R) > 1e-9)
    if nonzero < MIN_POINTS:
        raise InsufficientPoints(
            f"only {nonzero} nonzero remainders; need {MIN_POINTS} for a slope fit"
        )
    x = np.array([ENVELOPES[plan.envelope](mu, h) for mu, h in pairs])
    fit = fit_slope(x, np.maximum(np.abs(R), FLOOR))
    if plan.informational:
        verdict = "info"
    else:
        verdict = "pass" if abs(fit.slope - plan.reference_slope) <= plan.tolerance else "fail"
    note = ""
    if plan.template == "thm-13-6-40":
        resid = np.log(np.maximum(np.abs(R), FLOOR)) - (fit.intercept + fit.slope * np.log(x))
        mus = np.array(plan.mu_grid, dtype=float)
        corr = float(np.corrcoef(np.log(mus), resid)[0, 1]) if np.ptp(resid) > 0 else 0.0
        note = f"residual correlation with log mu: {corr:.3f}"
    return SweepReport(plan, rows, fit.slope, fit.stderr, fit.intercept, verdict, ratios, note)


# -- templates ----------------------------------------------------------------------------


def lattice_plan(l=1.0, k=1.0, tau=0.9, exponents=range(4, 10)) -> SweepPlan:
    """Lattice model along ``mu = 1/h``; remainder against ``h^-1``."""
    hs = tuple(2.0**-e for e in exponents)
    return SweepPlan(
        "lattice", {"l": l, "k": k, "tau": tau, "kind": PAULI}, "muh_ge_1",
        tuple(1 / h for h in hs), hs, "mu=1/h", "lattice", "lattice_weyl", "h^-1", 1.0, 0.3,
    )


def thm_13_6_39_plan(k=1.0, l=1.0, tau=0.9, muh=1.5, exponents=range(3, 7),
                     method_approx="second_term") -> SweepPlan:
    """Isotropic Pauli model with ``mu h`` fixed; remainder against ``h^-1``."""
    hs = tuple(2.0**-e for e in exponents)
    return SweepPlan(
        "thm-13-6-39", {"k": k, "l": l, "tau": tau, "kind": PAULI, "muh": muh}, "muh_ge_1",
        tuple(muh / h for h in hs), hs, f"muh={muh}", "isotropic", method_approx, "h^-1", 1.0, 0.4,
    )


def thm_13_6_30_plan(k=1.0, l=1.0, tau=0.9, h=2.0**-6, method_approx="second_term") -> SweepPlan:
    """Isotropic Schrodinger model, ``mu h <= 1`` at fixed ``h``; remainder
    against ``mu^-1``."""
    mus = []
    mu = 2.0
    while mu * h <= 1:
        mus.append(mu)
        mu *= 2
    return SweepPlan(
        "thm-13-6-30", {"k": k, "l": l, "tau": tau, "kind": SCHRODINGER}, "muh_le_1",
        tuple(mus), tuple(h for _ in mus), f"h={h}", "isotropic", method_approx, "mu^-1", 1.0, 0.4,
    )


def thm_13_6_40_plan(k=1.0, l=1.0, tau=0.9, exponents=range(3, 7)) -> SweepPlan:
    """Pauli model along ``mu = h^-3/2``: fits the ``h^-1`` envelope and reports
    the residual trend against ``log mu`` (informational)."""
    hs = tuple(2.0**-e for e in exponents)
    return SweepPlan(
        "thm-13-6-40", {"k": k, "l": l, "tau": tau, "kind": PAULI}, "muh_ge_1",
        tuple(h**-1.5 for h in hs), hs, "mu=h^-3/2", "isotropic", "second_term", "h^-1", 1.0, 0.4,
        informational=True,
    )


TEMPLATES = {
    "lattice": lattice_plan,
    "thm-13-6-39": thm_13_6_39_plan,
    "thm-13-6-30": thm_13_6_30_plan,
    "thm-13-6-40": thm_13_6_40_plan,
}


def theorem_13_6_39_check(k, l, tau, h_grid: Sequence[float], muh: float = 1.5,
                          method_approx: str = "second_term") -> SweepReport:
    """Remainder of the isotropic Pauli count against the second term, ``mu h``
    fixed, fitted against ``h^-1``."""
    if muh < 1:
        raise ConfigError("the Pauli second-term check needs mu h >= 1")
    hs = tuple(float(h) for h in h_grid)
    plan = SweepPlan(
        "thm-13-6-39", {"k": k, "l": l, "tau": tau, "kind": PAULI, "muh": muh}, "muh_ge_1",
        tuple(muh / h for h in hs), hs, f"muh={muh}", "isotropic", method_approx, "h^-1", 1.0, 0.4,
    )
    return run_sweep(plan)
