"""Command-line front end: ``magdrift <command> --config file.json [--out dir]``.

Every run writes ``manifest.json`` (config echo, versions, status) into the
output directory.  Wall-clock time goes to ``timing.json`` so that all other
artifacts are byte-identical across repeated runs.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import action, asymptotics, catalog, dynamics, spectral
from .errors import ConfigError, MagdriftError
from .model import PAULI, SCHRODINGER, ModelSpec, check_conditions, box_grid, from_expressions

COMMANDS = ("simulate", "driftline", "magline", "guiding", "billiard", "action", "classify",
            "count", "sweep", "check")

COMMON = {"command", "model", "params", "mu", "h", "tau", "kind", "domain", "C0", "boundary",
          "seed", "tol", "grid", "output"}

SPECIFIC = {
    "simulate": {"x0", "xi0", "t_end", "samples_per_period"},
    "driftline": {"x0", "t_end"},
    "magline": {"x0", "t_end", "n_samples"},
    "guiding": {"x0", "xi0", "t_end", "periods"},
    "billiard": {"x0", "xi0", "n_reflections"},
    "action": {"x1", "x2", "r_values"},
    "classify": {"x1", "x2", "r_values", "eps"},
    "count": {"l", "k", "method_approx"},
    "sweep": {"template", "template_params"},
    "check": {"eps"},
}

DEFAULTS = {"tol": 1e-9, "grid": 64, "C0": 2.0, "seed": 0, "mu": 1.0, "h": 1.0,
            "kind": SCHRODINGER, "output": "out"}

LATTICE_MODEL = "ex-13-6-41"


@dataclass
class RunConfig:
    command: str
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)


def parse_config(text: str) -> RunConfig:
    """Validate a JSON config; unknown keys and out-of-range values raise
    :class:`ConfigError`."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cmd = raw.get("command")
    if cmd not in COMMANDS:
        raise ConfigError(f"unknown command {cmd!r}")
    allowed = COMMON | SPECIFIC[cmd]
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} for command {cmd}")
    vals = dict(DEFAULTS)
    vals.update(raw)
    mu, h = vals["mu"], vals["h"]
    if not isinstance(mu, (int, float)) or mu < 1:
        raise ConfigError(f"mu must be >= 1, got {mu!r}")
    if not isinstance(h, (int, float)) or not 0 < h <= 1:
        raise ConfigError(f"h must lie in (0, 1], got {h!r}")
    if vals["kind"] not in (SCHRODINGER, PAULI):
        raise ConfigError(f"unknown kind {vals['kind']!r}")
    if not isinstance(vals["grid"], int) or vals["grid"] < 2:
        raise ConfigError("grid must be an integer >= 2")
    if cmd != "sweep" and "model" not in raw:
        raise ConfigError(f"command {cmd} needs a model")
    return RunConfig(cmd, vals)


def build_model(cfg: RunConfig) -> ModelSpec:
    src = cfg["model"]
    kw: dict[str, Any] = {"mu": float(cfg["mu"]), "h": float(cfg["h"]), "kind": cfg["kind"],
                          "C0": float(cfg["C0"])}
    if cfg.get("domain") is not None:
        kw["domain"] = tuple(tuple(float(v) for v in iv) for iv in cfg["domain"])
    params = dict(cfg.get("params") or {})
    if isinstance(src, str):
        if "tau" in cfg.values:
            params["tau"] = cfg["tau"]
        if cfg.get("boundary") is not None:
            params["k"] = cfg["boundary"]
        return catalog.build(src, **params, **kw)
    if isinstance(src, dict):
        unknown = set(src) - {"vecpot", "scalpot", "metric"}
        if unknown:
            raise ConfigError(f"unknown model key {sorted(unknown)[0]!r}")
        try:
            vec, scal = src["vecpot"], src["scalpot"]
        except KeyError as exc:
            raise ConfigError(f"inline model needs {exc.args[0]!r}") from None
        kw["hplanck"] = kw.pop("h")
        if "tau" in cfg.values:
            kw["tau"] = float(cfg["tau"])
        if cfg.get("boundary") is not None:
            kw["boundary_slope"] = float(cfg["boundary"])
        try:
            return from_expressions(vec, scal, src.get("metric"), **kw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
    raise ConfigError("model must be a catalog name or an inline expression object")


# -- output helpers ------------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require(cfg, key):
    if cfg.get(key) is None:
        raise ConfigError(f"command {cfg.command} needs {key!r}")
    return cfg[key]


# -- commands ------------------------------------------------------------------------------


def _phase_point(cfg, model):
    x0 = _require(cfg, "x0")
    xi0 = _require(cfg, "xi0")
    if len(x0) != model.dim or len(xi0) != model.dim:
        raise ConfigError(f"x0 and xi0 need {model.dim} components")
    return dynamics.PhasePoint(np.array(x0, float), np.array(xi0, float))


def cmd_simulate(cfg, out: Path, threads: int) -> dict:
    model = build_model(cfg)
    p0 = _phase_point(cfg, model)
    traj = dynamics.integrate_flow(model, p0, float(_require(cfg, "t_end")), tol=cfg["tol"],
                                   samples_per_period=int(cfg.get("samples_per_period", 64)))
    traj.write_csv(out / "trajectory.csv")
    summary = {"energy_drift": traj.energy_drift, "n_samples": len(traj.times),
               "predicted_period": dynamics.predicted_period(model, p0.x)}
    write_json(out / "summary.json", summary)
    return summary


def cmd_guiding(cfg, out: Path, threads: int) -> dict:
    model = build_model(cfg)
    p0 = _phase_point(cfg, model)
    T = dynamics.predicted_period(model, p0.x)
    t_end = float(cfg.get("t_end") or cfg.get("periods", 40) * T)
    traj = dynamics.integrate_flow(model, p0, t_end, tol=cfg["tol"])
    gc = dynamics.guiding_center(traj, model)
    traj.write_csv(out / "trajectory.csv")
    res = {"period_meas": gc.period_meas, "predicted_period": T,
           "drift_velocity_meas": gc.drift_velocity_meas, "drift_speed_meas": gc.drift_speed_meas}
    if model.dim == 2:
        pd = dynamics.predicted_drift(model, p0.x)
        res["predicted_drift"] = pd
        res["predicted_drift_speed"] = float(np.linalg.norm(pd))
    write_json(out / "guiding.json", res)
    return res


def cmd_driftline(cfg, out: Path, threads: int) -> dict:
    model = build_model(cfg)
    x0 = np.array(_require(cfg, "x0"), float)
    c = dynamics.integrate_drift_line_2d(model, x0, float(cfg.get("t_end", 10.0)))
    q = (model.num.V(*c.x.T)[0] - model.tau) / np.abs(model.num.F(*c.x.T)[0])
    with open(out / "driftline.csv", "w") as fh:
        fh.write("t,x1,x2,q\n")
        for t, x, v in zip(c.times, c.x, q):
            fh.write(",".join(repr(float(s)) for s in (t, *x, v)) + "\n")
    res = {"terminated": c.terminated, "message": c.message,
           "max_level_deviation": float(np.max(np.abs(q - q[0])))}
    write_json(out / "summary.json", res)
    return res


def cmd_magline(cfg, out: Path, threads: int) -> dict:
    model = build_model(cfg)
    x0 = np.array(_require(cfg, "x0"), float)
    t_end = float(cfg.get("t_end", 10.0))
    ts = np.linspace(0.0, t_end, int(cfg.get("n_samples", 401)))
    c = dynamics.integrate_magnetic_line_3d(model, x0, t_end, t_eval=ts)
    with open(out / "magline.csv", "w") as fh:
        fh.write("t,x1,x2,x3\n")
        for t, x in zip(c.times, c.x):
            fh.write(",".join(repr(float(s)) for s in (t, *x)) + "\n")
    res = {"n_samples": len(c.times), "end": c.x[-1]}
    write_json(out / "summary.json", res)
    return res


def cmd_billiard(cfg, out: Path, threads: int) -> dict:
    model = build_model(cfg)
    p0 = _phase_point(cfg, model)
    traj = dynamics.billiard_flow(model, p0, int(cfg.get("n_reflections", 100)), tol=cfg["tol"])
    traj.write_csv(out / "trajectory.csv")
    traj.write_events_csv(out / "events.csv")
    res = {"n_events": len(traj.events), "energy_drift": traj.energy_drift}
    write_json(out / "summary.json", res)
    return res


def _action_grid(cfg, model):
    n = cfg["grid"]
    (a1, b1), (a2, b2) = model.domain[0], model.domain[1]
    x1 = np.linspace(*cfg.get("x1", (a1, b1)), n)
    x2 = np.linspace(*cfg.get("x2", (a2, b2)), n)
    r = cfg.get("r_values", [0.0])
    return action.build_action_grid(model, x1, x2, r)


def cmd_action(cfg, out: Path, threads: int) -> dict:
    model = build_model(cfg)
    if model.dim != 3:
        raise ConfigError("action needs a 3D model")
    grid = _action_grid(cfg, model)
    grid.write_csv(out / "action_grid.csv")
    res = {"n_points": int(grid.eta.size), "n_valid": int(grid.valid.sum()),
           "n_noisy": int(grid.noisy.sum())}
    write_json(out / "summary.json", res)
    return res


def cmd_classify(cfg, out: Path, threads: int) -> dict:
    model = build_model(cfg)
    if model.dim != 3:
        raise ConfigError("classify needs a 3D model")
    grid = _action_grid(cfg, model)
    table = action.classify_nondegeneracy(model, grid, eps=float(cfg.get("eps", 1e-3)))
    rows = []
    for entry in table:
        row = {"r": entry["r"], "empty": entry["empty"]}
        for key, v in entry.items():
            if isinstance(v, action.Verdict):
                row[key] = {"holds": v.holds, "margin": v.margin, "detail": v.detail}
        rows.append(row)
    write_json(out / "classify.json", {"rows": rows})
    return {"rows": rows}


def cmd_count(cfg, out: Path, threads: int) -> dict:
    src = cfg["model"]
    mu, h, kind = float(cfg["mu"]), float(cfg["h"]), cfg["kind"]
    tau = float(_require(cfg, "tau"))
    params = dict(cfg.get("params") or {})
    if src == LATTICE_MODEL:
        l = float(cfg.get("l", params.get("l", 1.0)))
        k = float(cfg.get("k", params.get("k", 1.0)))
        n = spectral.lattice_count(l, k, mu, h, tau)
        a = spectral.lattice_weyl(l, k, mu, h, tau)
        res = spectral.CountResult(mu, h, tau, kind, n, a, "lattice", "lattice_weyl")
    elif src == "ex-13-6-34-ii":
        k = float(params.get("k", 1.0))
        l1, l2 = float(params.get("l1", 1.0)), float(params.get("l2", 1.0))
        if l1 != l2 or l1 <= 0:
            raise ConfigError("exact counts need the isotropic model l1 = l2 > 0")
        l = math.sqrt(l1)
        n = spectral.isotropic_exact_count(k, l, mu, h, tau, kind)
        method = cfg.get("method_approx", "second_term")
        if method == "second_term":
            a = spectral.isotropic_second_term(k, l, mu, h, tau, kind)
        elif method == "bohr_sommerfeld":
            a = spectral.isotropic_second_term_bs(k, l, mu, h, tau, kind)
        else:
            raise ConfigError(f"unknown method_approx {method!r}")
        res = spectral.CountResult(mu, h, tau, kind, n, a, "isotropic", method)
    else:
        raise ConfigError(f"no exact counter for model {src!r}")
    spectral.write_ledger([res], out / "ledger.csv")
    write_json(out / "count.json", res.row())
    return res.row()


def cmd_sweep(cfg, out: Path, threads: int) -> dict:
    name = _require(cfg, "template")
    if name not in asymptotics.TEMPLATES:
        raise ConfigError(f"unknown sweep template {name!r}")
    try:
        plan = asymptotics.TEMPLATES[name](**(cfg.get("template_params") or {}))
    except TypeError as exc:
        raise ConfigError(f"bad template parameters: {exc}") from None
    report = asymptotics.run_sweep(plan, threads=threads)
    report.write_json(out / "sweep.json")
    spectral.write_ledger(report.rows, out / "ledger.csv")
    return {"verdict": report.verdict, "fitted_slope": report.fitted_slope}


def cmd_check(cfg, out: Path, threads: int) -> dict:
    model = build_model(cfg)
    n = min(cfg["grid"], 33)
    res = check_conditions(model, box_grid(model.domain, n), eps=float(cfg.get("eps", 1e-3)))
    table = {k: {"holds": v.holds, "margin": v.margin, "detail": v.detail} for k, v in res.items()}
    write_json(out / "conditions.json", table)
    return table


HANDLERS = {
    "simulate": cmd_simulate, "driftline": cmd_driftline, "magline": cmd_magline,
    "guiding": cmd_guiding, "billiard": cmd_billiard, "action": cmd_action,
    "classify": cmd_classify, "count": cmd_count, "sweep": cmd_sweep, "check": cmd_check,
}


def _versions() -> dict:
    import scipy
    import sympy

    from . import __version__

    return {"magdrift": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "sympy": sympy.__version__, "python": platform.python_version()}


def dispatch(cfg: RunConfig, out: Path, threads: int = 1) -> int:
    """Run ``cfg`` writing into ``out``; returns the exit status."""
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"config": cfg.values, "command": cfg.command, "versions": _versions()}
    t0 = time.perf_counter()
    status = 0
    try:
        manifest["result"] = HANDLERS[cfg.command](cfg, out, threads)
    except ConfigError as exc:
        status, manifest["error"] = 2, f"{type(exc).__name__}: {exc}"
    except (MagdriftError, ValueError, ArithmeticError) as exc:
        status, manifest["error"] = 1, f"{type(exc).__name__}: {exc}"
    manifest["status"] = status
    write_json(out / "manifest.json", manifest)
    write_json(out / "timing.json", {"wall_time_s": time.perf_counter() - t0})
    if status:
        print(f"magdrift: error: {manifest['error']}", file=sys.stderr)
    return status


def main(argv: Optional[list[str]] = None) -> int:
    ap = argparse.ArgumentParser(prog="magdrift", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON config file")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args(argv)
    threads = args.threads or int(os.environ.get("MAGDRIFT_THREADS", "1") or 1)
    out_dir = Path(args.out) if args.out else None
    try:
        text = Path(args.config).read_text()
        cfg = parse_config(text)
        if cfg.command != args.command:
            raise ConfigError(f"config command {cfg.command!r} does not match {args.command!r}")
    except (ConfigError, OSError) as exc:
        out = out_dir or Path("out")
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "manifest.json", {"status": 2, "error": str(exc), "command": args.command})
        print(f"magdrift: error: {exc}", file=sys.stderr)
        return 2
    out = out_dir or Path(cfg["output"])
    return dispatch(cfg, out, max(threads, 1))


if __name__ == "__main__":
    sys.exit(main())
