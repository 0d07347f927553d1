"""Command line entry point.

    torusflow run <config.yaml> [--seed N] [--out DIR]
    torusflow describe <config.yaml>

A run writes ``<scenario>_seed<N>.csv``, ``<scenario>_seed<N>.json`` and
``<scenario>_seed<N>_config.yaml`` (the config with every default resolved).
Numerical artifacts depend only on the config and the seed.

Exit codes: 0 success, 2 invalid config, 3 invariant violated (the JSON report
is still written and holds the audit dump).
"""
from __future__ import annotations

import argparse
import copy
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import metrics, rotation, verify
from .flow import (DiffeoState, check_no_collision, evolve_ensemble, label_grid, min_neighbour_separation,
                   path_rng, shear, translation, volume_distortion)
from .spectrum import (SingleModeDrift, Spectrum, SpectrumError, WaveVector, ZeroDrift, drift_from_config,
                       generator_constant, grad_bound_constants)

SCENARIOS = ("simulate", "distance-audit", "stability-audit", "rotation", "example-annulus", "calibrate")
INITIALS = ("identity", "translation", "shear", "annulus")
EXIT_CONFIG = 2
EXIT_INVARIANT = 3

FLOW_DEFAULTS = {"grid_n": 32, "dt": 1e-3, "n_steps": 100, "n_paths": 1, "seed": 0, "record_every": 1}
SCENARIO_DEFAULTS = {
    "rotation": {"separation": 0.05, "window": None, "K": None},
    "example-annulus": {"alpha": 0.2, "eps": 0.02, "labels": [16, 4096]},
    "calibrate": {"t": 0.1, "start": [0.0, 0.0]},
}


class ConfigError(ValueError):
    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


@dataclass
class RunConfig:
    scenario: str
    spectrum: Spectrum
    drift: object
    flow: dict
    initial: dict
    params: dict
    output: dict
    raw: dict = field(repr=False)

    @property
    def seed(self) -> int:
        return self.flow["seed"]

    def resolved(self) -> dict:
        """Config echo with every default filled in."""
        out = copy.deepcopy(self.raw)
        out["scenario"] = self.scenario
        out["spectrum"] = self.spectrum.to_config()
        out["drift"] = self.drift.to_config()
        out["flow"] = dict(self.flow)
        out["initial"] = dict(self.initial)
        out["output"] = dict(self.output)
        if self.params:
            out[self.scenario] = dict(self.params)
        return out


# validation ------------------------------------------------------------------

def _number(block, key, where, default=None, positive=True, integer=False):
    val = block.get(key, default)
    if val is None:
        raise ConfigError(f"{where}.{key}", "is required")
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}.{key}", f"must be a number, got {val!r}")
    if integer:
        if int(val) != val:
            raise ConfigError(f"{where}.{key}", "must be an integer")
        val = int(val)
    else:
        val = float(val)
    if positive and not val > 0:
        raise ConfigError(f"{where}.{key}", "must be positive")
    return val


def _spectrum(block) -> Spectrum:
    if not isinstance(block, dict):
        raise ConfigError("spectrum", "block is required")
    for i, entry in enumerate(block.get("modes") or ()):
        if not isinstance(entry, (list, tuple)) or len(entry) != 3:
            raise ConfigError(f"spectrum.modes[{i}]", "each mode must be [k1, k2, lambda]")
        try:
            WaveVector(entry[0], entry[1])
        except SpectrumError as exc:
            raise ConfigError(f"spectrum.modes[{i}]", str(exc)) from None
    try:
        return Spectrum.from_config(block)
    except (SpectrumError, TypeError, ValueError) as exc:
        raise ConfigError("spectrum", str(exc)) from None


def _initial(block) -> dict:
    block = dict(block or {"type": "identity"})
    kind = block.get("type", "identity")
    if kind not in INITIALS:
        raise ConfigError("initial.type", f"must be one of {', '.join(INITIALS)}")
    if kind == "translation":
        c = block.get("c")
        if not isinstance(c, (list, tuple)) or len(c) != 2:
            raise ConfigError("initial.c", "translation needs c: [c1, c2]")
        block["c"] = [float(c[0]), float(c[1])]
    elif kind == "shear":
        block["amplitude"] = _number(block, "amplitude", "initial")
        axis = block.setdefault("axis", 0)
        if axis not in (0, 1):
            raise ConfigError("initial.axis", "must be 0 or 1")
        block["wavenumber"] = _number(block, "wavenumber", "initial", default=1, integer=True)
        block["phase"] = _number(block, "phase", "initial", default=0.0, positive=False)
    elif kind == "annulus":
        block["alpha"] = _number(block, "alpha", "initial")
        block["eps"] = _number(block, "eps", "initial")
        try:
            verify.build_annulus(block["alpha"], block["eps"])
        except ValueError as exc:
            raise ConfigError("initial", str(exc)) from None
    block["type"] = kind
    return block


def build_config(raw: dict, seed: int | None = None, out: str | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a mapping")
    scenario = raw.get("scenario")
    if scenario not in SCENARIOS:
        raise ConfigError("scenario", f"must be one of {', '.join(SCENARIOS)}")
    s = _spectrum(raw.get("spectrum"))
    try:
        drift = drift_from_config(raw.get("drift"), s.nu)
    except (SpectrumError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError("drift", str(exc)) from None

    fl = {**FLOW_DEFAULTS, **(raw.get("flow") or {})}
    if seed is not None:
        fl["seed"] = seed
    flow = {
        "grid_n": _number(fl, "grid_n", "flow", integer=True),
        "dt": _number(fl, "dt", "flow"),
        "n_steps": _number(fl, "n_steps", "flow", integer=True),
        "n_paths": _number(fl, "n_paths", "flow", integer=True),
        "seed": _number(fl, "seed", "flow", integer=True, positive=False),
        "record_every": _number(fl, "record_every", "flow", integer=True),
    }
    if flow["seed"] < 0:
        raise ConfigError("flow.seed", "must be nonnegative")
    if flow["grid_n"] < 4:
        raise ConfigError("flow.grid_n", "must be at least 4")

    initial = _initial(raw.get("initial"))
    params = {**SCENARIO_DEFAULTS.get(scenario, {}), **(raw.get(scenario) or {})}

    if scenario in ("distance-audit", "stability-audit") and initial["type"] == "identity":
        raise ConfigError("initial", f"{scenario} needs two distinct flows; identity gives zero distance")
    if scenario == "stability-audit":
        if s.radius is None:
            raise ConfigError("spectrum.radius", "stability-audit needs a band limit")
        if not isinstance(drift, (ZeroDrift, SingleModeDrift)):
            raise ConfigError("drift", "stability-audit needs a zero or single-mode drift")
    if scenario == "rotation":
        params["separation"] = _number(params, "separation", "rotation")
        if params["window"] is not None:
            params["window"] = _number(params, "window", "rotation", integer=True)
            if params["window"] < 30 or params["window"] > flow["n_steps"]:
                raise ConfigError("rotation.window", "must lie between 30 and flow.n_steps")
        elif flow["n_steps"] < 30:
            raise ConfigError("flow.n_steps", "rotation needs at least 30 steps")
        if params["K"] is not None:
            params["K"] = _number(params, "K", "rotation")
    if scenario == "example-annulus":
        params["alpha"] = _number(params, "alpha", "example-annulus")
        params["eps"] = _number(params, "eps", "example-annulus")
        lab = params["labels"]
        if not isinstance(lab, (list, tuple)) or len(lab) != 2 or min(lab) < 4:
            raise ConfigError("example-annulus.labels", "must be [n1, n2] with both >= 4")
        params["labels"] = [int(lab[0]), int(lab[1])]
        try:
            verify.build_annulus(params["alpha"], params["eps"])
        except ValueError as exc:
            raise ConfigError("example-annulus", str(exc)) from None
        if flow["n_paths"] < 100:
            raise ConfigError("flow.n_paths", "example-annulus needs at least 100 restarts")
    if scenario == "calibrate":
        params["t"] = _number(params, "t", "calibrate")
        if params["t"] < flow["dt"]:
            raise ConfigError("calibrate.t", "must cover at least one step")
        if flow["n_paths"] < 2:
            raise ConfigError("flow.n_paths", "calibrate needs at least 2 paths")
        params["start"] = [float(x) for x in params["start"]]

    output = {"dir": "out", "formats": ["csv", "json"], **(raw.get("output") or {})}
    if out is not None:
        output["dir"] = out
    bad = set(output["formats"]) - {"csv", "json"}
    if bad:
        raise ConfigError("output.formats", f"unknown format(s): {', '.join(sorted(bad))}")
    return RunConfig(scenario, s, drift, flow, initial, params, output, raw)


def load_config(path, seed=None, out=None) -> RunConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"invalid YAML: {exc}") from None
    return build_config(raw, seed=seed, out=out)


# describe ------------------------------------------------------------------------

def describe_quantities(cfg: RunConfig) -> dict:
    s = cfg.spectrum
    R = s.radius if s.radius is not None else (float(np.sqrt(s.norms_sq.max())) if s.n_modes else None)
    out = {"C": generator_constant(s), "nu": s.nu, "n_modes": s.n_modes, "R": R}
    if R is not None and R >= 1:
        consts = metrics.stability_constants(s, R)
        out.update(c_R=consts.c_R, c_R_prime=consts.c_R_prime, thresholds=metrics.event_thresholds(R))
    try:
        out["c1"], out["c2"] = grad_bound_constants(cfg.drift)
    except TypeError:
        out["c1"] = out["c2"] = None
    return out


def describe_text(cfg: RunConfig) -> str:
    q = describe_quantities(cfg)
    lines = [
        f"scenario     {cfg.scenario}",
        f"modes        {q['n_modes']} stored, nu = {q['nu']:g}",
        f"C            {q['C']:.10g}",
    ]
    if "c_R" in q:
        lines += [
            f"R            {q['R']:g}",
            f"c_R          {q['c_R']:.10g}",
            f"c_R'         {q['c_R_prime']:.10g}",
        ]
        lines += [f"threshold    {name} = {val:.10g}" for name, val in q["thresholds"].items()]
    else:
        lines.append("R            undefined (no band limit), stability constants skipped")
    if q["c1"] is None:
        lines.append("(c1, c2)     unavailable for this drift")
    else:
        lines.append(f"(c1, c2)     ({q['c1']:.10g}, {q['c2']:.10g})")
    return "\n".join(lines)


# scenarios -------------------------------------------------------------------

def initial_pair(cfg: RunConfig):
    n = cfg.flow["grid_n"]
    ini = cfg.initial
    g = DiffeoState.identity(n)
    if ini["type"] == "identity":
        return g, g.copy()
    if ini["type"] == "translation":
        phi = translation(*ini["c"])
    elif ini["type"] == "shear":
        phi = shear(ini["amplitude"], ini["axis"], ini["wavenumber"], ini["phase"])
    else:
        phi = verify.build_annulus(ini["alpha"], ini["eps"])
    return g, DiffeoState.from_map(phi, n)


class _SeriesRows:
    """Observer collecting per-path distance rows every ``record_every`` steps."""

    def __init__(self, cfg: RunConfig, bounds: bool = False):
        self.cfg = cfg
        self.every = cfg.flow["record_every"]
        self.n_steps = cfg.flow["n_steps"]
        self.bounds = bounds
        self.rows = []
        self.bound_records = []
        self.R = cfg.spectrum.radius

    def __call__(self, i, t, g, gt, noise):
        if i % self.every and i != self.n_steps:
            return
        s = self.cfg.spectrum
        ext = np.atleast_1d(metrics.extrinsic_distance(g, gt))
        same = np.all(g == gt, axis=(1, 2))
        co = None if np.any(same) else metrics.coefficients(g, gt, s)
        for p in range(g.shape[0]):
            row = {"path": p, "t": t, "rho_ext": ext[p]}
            if co is None:
                d = np.hypot(*np.moveaxis(metrics.pointwise_delta(g[p], gt[p]), -1, 0))
                row.update(rho=float(np.sqrt(np.mean(d**2))), sigma_sq=None, b=None,
                           sup_pointwise=float(d.max()), cutlocus=False)
            else:
                row.update(rho=co.rho[p], sigma_sq=co.sigma_sq[p], b=co.b[p],
                           sup_pointwise=co.sup_pointwise[p], cutlocus=bool(co.cutlocus[p]))
            for key, thr in (("event_R", 1.0), ("event_2R", 0.5), ("event_sqrt2R", math.sqrt(2))):
                row[key] = None if self.R is None else row["sup_pointwise"] <= math.pi * thr / self.R
            self.rows.append(row)
            if self.bounds:
                rep = metrics.audit_coefficient_bounds(g[p], gt[p], s, self.R)
                self.bound_records.append((i, p, rep))


def _write_rows_csv(dest, rows):
    cols = ("path",) + metrics.SERIES_COLUMNS
    with open(dest, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(str(r["path"]) if c == "path" else metrics._fmt(r[c]) for c in cols) + "\n")


def _ensemble(cfg: RunConfig, observer):
    g, gt = initial_pair(cfg)
    f = cfg.flow
    return evolve_ensemble(g.flat, gt.flat, cfg.spectrum, cfg.drift, f["dt"], f["n_steps"], f["seed"],
                           f["n_paths"], observer=observer)


def _monitor(cfg: RunConfig, g_final) -> dict:
    n, dt = cfg.flow["grid_n"], cfg.flow["dt"]
    state = DiffeoState(g_final[0].reshape(n, n, 2), cfg.flow["n_steps"] * dt)
    return {
        "volume_distortion": volume_distortion(state),
        "min_neighbour_separation": min_neighbour_separation(state),
        "no_collision": bool(check_no_collision(state, dt)),
    }


def scenario_simulate(cfg):
    obs = _SeriesRows(cfg)
    g, _ = _ensemble(cfg, obs)
    final = [r for r in obs.rows if r["t"] == obs.rows[-1]["t"]]
    report = {
        "final_rho": [float(r["rho"]) for r in final],
        "final_rho_ext": [float(r["rho_ext"]) for r in final],
        "monitor": _monitor(cfg, g),
    }
    return report, obs.rows, not report["monitor"]["no_collision"]


def scenario_distance_audit(cfg, tol=1e-9):
    obs = _SeriesRows(cfg, bounds=True)
    _ensemble(cfg, obs)
    bad = [{"step": i, "path": p, **vars(rep)} for i, p, rep in obs.bound_records if not rep.passed(tol)]
    reps = [rep for _, _, rep in obs.bound_records]
    applicable = [r.b_minus_half_sigma_sq for r in reps if r.applicable]
    report = {
        "tol": tol,
        "checked": len(reps),
        "applicable": len(applicable),
        "min_bound_sigma_residual": min(r.bound_sigma_residual for r in reps),
        "min_bound_b_residual": min(r.bound_b_residual for r in reps),
        "min_b_minus_half_sigma_sq": min(applicable) if applicable else None,
        "max_delta_identity_error": max(r.delta_identity_error for r in reps),
        "violations": len(bad),
        "violating_records": bad,
    }
    return report, obs.rows, bool(bad)


def scenario_stability_audit(cfg):
    f = cfg.flow
    rec = metrics.SeriesRecorder(cfg.spectrum, cfg.drift, f["n_steps"], f["n_paths"])
    _ensemble(cfg, rec)
    series = rec.series()
    rep = metrics.audit_stability(series, cfg.spectrum, cfg.drift, f["dt"])
    report = rep.to_dict()
    rows = []
    for p in range(f["n_paths"]):
        for i in range(0, f["n_steps"] + 1, f["record_every"]):
            sup = series.sup_pointwise[p, i]
            R = rep.R
            rows.append({
                "path": p, "t": series.times[i], "rho": series.rho[p, i], "rho_ext": None,
                "sigma_sq": series.sigma_sq[p, i], "b": series.b[p, i], "sup_pointwise": sup,
                "cutlocus": series.cutlocus[p, i], "event_R": sup <= math.pi / R,
                "event_2R": sup <= math.pi / (2 * R), "event_sqrt2R": sup <= math.pi * math.sqrt(2) / R,
            })
    violated = rep.drift_bound_violations + rep.sharp_bound_violations + rep.integrated_violations > 0
    return report, rows, violated


def rotation_start(cfg):
    """Deterministic pair starts: uniform first points, uniform directions."""
    rng = path_rng(cfg.seed, 2**32)
    P = cfg.flow["n_paths"]
    x0 = rng.uniform(0, 2 * math.pi, (P, 2))
    ang = rng.uniform(0, 2 * math.pi, P)
    y0 = x0 + cfg.params["separation"] * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    return x0, y0


def scenario_rotation(cfg, tol=1e-12):
    s, f = cfg.spectrum, cfg.flow
    x0, y0 = rotation_start(cfg)
    diag = rotation.track_pairs(x0, y0, s, cfg.drift, f["dt"], f["n_steps"], f["seed"])
    window = cfg.params["window"] or f["n_steps"]
    K = cfg.params["K"] or float(np.sqrt(s.norms_sq.max())) + 0.5
    bound = rotation.qv_lower_bound(s, K)
    event = diag.rho_point <= math.pi / (2 * K)
    resid = (diag.qv_rate_analytic - bound)[event]
    realized = diag.realized_qv(window, f["dt"])
    analytic = diag.mean_analytic_rate(window)
    report = {
        "window": window, "K": K, "lower_bound": bound,
        "realized_qv_rate": realized, "analytic_qv_rate": analytic,
        "relative_error": abs(realized - analytic) / analytic if analytic else None,
        "bound_steps": int(event.sum()),
        "bound_min_residual": float(resid.min()) if resid.size else None,
        "bound_violations": int(np.sum(resid < -tol)),
    }
    rows = [{"path": p, "t": t, "X": diag.X[i, p], "rho_point": diag.rho_point[i, p],
             "qv_rate_analytic": diag.qv_rate_analytic[i, p]}
            for p in range(diag.X.shape[1]) for i, t in enumerate(diag.times) if i % f["record_every"] == 0]
    return report, rows, report["bound_violations"] > 0


def scenario_example(cfg):
    p, f = cfg.params, cfg.flow
    rep = verify.run_example_negative_drift(cfg.spectrum, p["alpha"], p["eps"], f["dt"], f["n_paths"],
                                            labels=tuple(p["labels"]), seed=f["seed"])
    return rep, None, False


def scenario_calibrate(cfg):
    p, f = cfg.params, cfg.flow
    rep = verify.variance_calibration(cfg.spectrum, f["n_paths"], p["t"], f["dt"], f["seed"], p["start"])
    rep["within_3se"] = [bool(abs(z) <= 3.0) for z in rep["z_scores"]]
    return rep, None, rep["invariant_violated"]


RUNNERS = {
    "simulate": scenario_simulate,
    "distance-audit": scenario_distance_audit,
    "stability-audit": scenario_stability_audit,
    "rotation": scenario_rotation,
    "example-annulus": scenario_example,
    "calibrate": scenario_calibrate,
}


def _write_generic_csv(dest, rows):
    cols = list(rows[0])
    with open(dest, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(str(r[c]) if c == "path" else metrics._fmt(r[c]) for c in cols) + "\n")


def run(cfg: RunConfig) -> tuple[int, dict, dict]:
    """Execute the scenario and write artifacts; returns ``(exit_code, paths, report)``."""
    out = Path(cfg.output["dir"])
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{cfg.scenario}_seed{cfg.seed}"
    report, rows, violated = RUNNERS[cfg.scenario](cfg)
    report = {"scenario": cfg.scenario, "seed": cfg.seed, "invariant_violated": bool(violated), "result": report}
    paths = {}
    echo = out / f"{stem}_config.yaml"
    with open(echo, "w") as fh:
        yaml.safe_dump(cfg.resolved(), fh, sort_keys=True)
    paths["config"] = echo
    if "json" in cfg.output["formats"]:
        paths["json"] = out / f"{stem}.json"
        metrics.dump_json(report, paths["json"])
    if rows and "csv" in cfg.output["formats"]:
        paths["csv"] = out / f"{stem}.csv"
        if set(rows[0]) == {"path", *metrics.SERIES_COLUMNS}:
            _write_rows_csv(paths["csv"], rows)
        else:
            _write_generic_csv(paths["csv"], rows)
    return (EXIT_INVARIANT if violated else 0), paths, report


def summary_text(cfg: RunConfig, report: dict, paths: dict, elapsed: float) -> str:
    res = report["result"]
    lines = [describe_text(cfg), "", f"status       {'INVARIANT VIOLATED' if report['invariant_violated'] else 'ok'}"]
    for key in sorted(res):
        val = res[key]
        if isinstance(val, (list, dict)) and len(str(val)) > 100:
            continue
        lines.append(f"{key:<28} {val}")
    lines.append("")
    lines += [f"wrote        {p}" for p in paths.values()]
    lines.append(f"elapsed      {elapsed:.1f} s")
    return "\n".join(lines)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="torusflow", description="Coupled Brownian flows on the 2-torus")
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the scenario of a config file")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None, help="override flow.seed")
    p_run.add_argument("--out", default=None, help="override output.dir")
    p_desc = sub.add_parser("describe", help="print derived constants without running")
    p_desc.add_argument("config")
    args = ap.parse_args(argv)

    try:
        cfg = load_config(args.config, seed=getattr(args, "seed", None), out=getattr(args, "out", None))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "describe":
        print(describe_text(cfg))
        return 0

    t0 = time.perf_counter()
    code, paths, report = run(cfg)
    print(summary_text(cfg, report, paths, time.perf_counter() - t0))
    if code == EXIT_INVARIANT:
        print(f"error: invariant violated, audit dump in {paths.get('json', paths['config'])}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
