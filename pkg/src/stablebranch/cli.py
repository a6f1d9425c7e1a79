"""Command-line front end: ``stablebranch --experiment NAME [--config FILE] [flags]``.

A run reads a flat JSON object, overlays command-line flags, validates the
result, then writes a CSV data file and a JSON summary. Exit codes: 0 success,
2 configuration error, 3 runtime error, 4 a check failed under ``--assert``.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .engine import SimConfig, run_ensemble
from .errors import BranchingError, ParseError, ValidationError
from .estimator import compare_constant, estimate_tail, fit_exponent
from .motion import brownian, compound_poisson_diffusion, lattice_walk, validate_moments
from .offspring import f_of_v, lemma2_constant, make_explicit, make_stable_tail
from .theory import (
    TheoryParams,
    branching_constant,
    discrete_fixed_point,
    finite_variance_constant,
    limit_constant,
    phi_closed_form,
    solve_bvp_shooting,
    theta,
)

log = logging.getLogger("stablebranch")

EXPERIMENTS = ("tail-mc", "fixed-point", "bvp", "theory-table", "lemma2-check")


@dataclass
class RunConfig:
    experiment: str = "theory-table"
    alpha: float = 1.5
    kappa: float = 0.2
    beta: float = 1.0
    eta2: float = 1.0
    offspring: str = "stable"
    p: list = field(default_factory=lambda: [0.5, 0.0, 0.5])
    motion: str = "brownian"
    step_values: list = field(default_factory=lambda: [-1.0, 1.0])
    step_probs: list = field(default_factory=lambda: [0.5, 0.5])
    jump_rate: float = 1.0
    jump_values: list = field(default_factory=lambda: [-1.0, 1.0])
    jump_probs: list = field(default_factory=lambda: [0.5, 0.5])
    diffusion_eta2: float = 0.0
    mode: str = "continuous"
    budget: int = 10**6
    x_stop: float | None = None
    n_trees: int = 10000
    workers: int = 1
    seed: int = 0
    x_grid: list = field(default_factory=lambda: [8.0, 10.0, 12.0, 14.0, 16.0])
    fit_min: float | None = None
    fit_max: float | None = None
    confidence: float = 0.99
    x_max: int = 4000
    tol: float = 1e-12
    eval_min: int = 100
    eval_max: int = 200
    y_max: float | None = None
    grid_step: float = 1e-3
    lemma2_v: list = field(default_factory=lambda: [1e-4, 1e-6])
    lemma2_tol: list = field(default_factory=lambda: [0.02, 0.005])
    assert_tol: float | None = None
    slope_tol: float = 0.3
    out_csv: str | None = None
    out_json: str | None = None


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_DEFAULTS = RunConfig()
_LISTS = {n for n in _FIELDS if isinstance(getattr(_DEFAULTS, n), list)}
_INTS = {"budget", "n_trees", "workers", "seed", "x_max", "eval_min", "eval_max"}
_STRS = {"experiment", "offspring", "motion", "mode", "out_csv", "out_json"}


def _coerce(name, value):
    if value is None:
        if _FIELDS[name].default is None or name in {"x_stop", "fit_min", "fit_max", "y_max", "assert_tol"}:
            return None
        raise ValidationError(f"{name} may not be null", field=name)
    try:
        if name in _LISTS:
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return [float(v) for v in value]
        if name in _STRS:
            if not isinstance(value, str):
                raise TypeError
            return value
        if name in _INTS:
            if isinstance(value, bool):
                raise TypeError
            f = float(value) if isinstance(value, str) else value
            if int(f) != f:
                raise TypeError
            return int(f)
        if isinstance(value, bool):
            raise TypeError
        return float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name}: cannot interpret {value!r}", field=name) from None


def _read_file(path):
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e.msg} at line {e.lineno} column {e.colno}", position=(e.lineno, e.colno)) from None
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be a JSON object", position=(1, 1))
    for k, v in data.items():
        if isinstance(v, dict):
            raise ValidationError(f"nested objects are not allowed ({k})", field=k)
    return data


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides``; validated."""
    raw = {}
    if path is not None:
        raw.update(_read_file(path))
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(raw) - set(_FIELDS))
    if unknown:
        raise ValidationError(f"unknown keys: {', '.join(unknown)}", field=unknown[0])
    values = {k: _coerce(k, v) for k, v in raw.items()}
    cfg = RunConfig(**values)
    validate(cfg)
    return cfg


def _need(cond, name, msg):
    if not cond:
        raise ValidationError(f"{name}: {msg}", field=name)


def validate(cfg: RunConfig):
    _need(cfg.experiment in EXPERIMENTS, "experiment", f"must be one of {', '.join(EXPERIMENTS)}")
    _need(1.0 < cfg.alpha < 2.0, "alpha", "must lie in (1, 2)")
    _need(cfg.kappa > 0, "kappa", "must be positive")
    _need(cfg.beta > 0, "beta", "must be positive")
    _need(cfg.eta2 > 0, "eta2", "must be positive")
    _need(cfg.offspring in ("stable", "explicit"), "offspring", "must be 'stable' or 'explicit'")
    _need(cfg.motion in ("brownian", "lattice", "compound_poisson"), "motion", "unknown motion kind")
    _need(cfg.mode in ("continuous", "discrete"), "mode", "must be 'continuous' or 'discrete'")
    _need(cfg.budget >= 1, "budget", "must be at least 1")
    _need(cfg.n_trees >= 1, "n_trees", "must be at least 1")
    _need(cfg.workers >= 1, "workers", "must be at least 1")
    _need(0 <= cfg.seed < 2**64, "seed", "must be an unsigned 64-bit integer")
    _need(0 < cfg.confidence < 1, "confidence", "must lie in (0, 1)")
    g = np.asarray(cfg.x_grid)
    _need(g.size > 0 and np.all(g > 0) and np.all(np.diff(g) > 0), "x_grid", "must be positive and strictly increasing")
    if cfg.x_stop is not None:
        _need(g[-1] <= cfg.x_stop, "x_stop", "must not be below the largest grid point")
    _need(cfg.x_max >= 1, "x_max", "must be positive")
    _need(1 <= cfg.eval_min <= cfg.eval_max <= cfg.x_max, "eval_max", "need 1 <= eval_min <= eval_max <= x_max")
    _need(0 < cfg.grid_step <= 0.01, "grid_step", "must lie in (0, 0.01]")
    _need(len(cfg.lemma2_v) == len(cfg.lemma2_tol), "lemma2_tol", "needs one tolerance per lemma2_v entry")
    _need(all(0 < v <= 1 for v in cfg.lemma2_v), "lemma2_v", "entries must lie in (0, 1]")
    if cfg.experiment == "tail-mc":
        _need((cfg.mode == "discrete") == (cfg.motion == "lattice"), "mode", "discrete mode pairs with the lattice motion")
    try:
        # constants alone do not need a feasible law
        if cfg.experiment in ("tail-mc", "lemma2-check") or cfg.offspring == "explicit":
            build_law(cfg)
        if cfg.experiment == "lemma2-check":
            make_stable_tail(cfg.alpha, cfg.kappa)
    except BranchingError as e:
        name = "p" if cfg.offspring == "explicit" else "kappa"
        raise ValidationError(f"{type(e).__name__}: {e}", field=name) from None
    try:
        if cfg.experiment == "tail-mc":
            validate_moments(build_motion(cfg), cfg.alpha)
        if cfg.experiment == "fixed-point":
            validate_moments(lattice_walk(cfg.step_values, cfg.step_probs), cfg.alpha)
    except BranchingError as e:
        lattice = cfg.experiment == "fixed-point" or cfg.motion == "lattice"
        raise ValidationError(f"{type(e).__name__}: {e}", field="step_values" if lattice else "motion") from None
    if cfg.experiment == "fixed-point":
        _need(cfg.offspring == "explicit", "offspring", "the lattice fixed point needs an explicit law")


def build_law(cfg: RunConfig):
    if cfg.offspring == "stable":
        return make_stable_tail(cfg.alpha, cfg.kappa)
    return make_explicit(cfg.p)


def build_motion(cfg: RunConfig):
    if cfg.motion == "brownian":
        return brownian(cfg.eta2)
    if cfg.motion == "lattice":
        return lattice_walk(cfg.step_values, cfg.step_probs)
    return compound_poisson_diffusion(cfg.jump_rate, cfg.jump_values, cfg.jump_probs, cfg.diffusion_eta2)


def fmt(x) -> str:
    """17 significant digits, locale independent; integers verbatim."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _stable_params(cfg, eta2=None):
    return TheoryParams(alpha=cfg.alpha, kappa=cfg.kappa, beta=cfg.beta, eta2=cfg.eta2 if eta2 is None else eta2)


def _check(name, value, limit, ok):
    return {"name": name, "value": value, "limit": limit, "pass": bool(ok)}


def _run_tail_mc(cfg, summary):
    law = build_law(cfg)
    model = build_motion(cfg)
    eta2 = model.eta2_total
    sim = SimConfig(mode=cfg.mode, beta=cfg.beta, budget=cfg.budget, stop_threshold=cfg.x_stop, master_seed=cfg.seed)
    out = run_ensemble(law, model, sim, cfg.n_trees, workers=cfg.workers)
    est = estimate_tail(out, cfg.x_grid, confidence=cfg.confidence)
    if law.kind == "stable":
        exponent = 2.0 / (law.alpha - 1.0)
        params = TheoryParams(alpha=law.alpha, kappa=law.kappa, beta=cfg.beta, eta2=eta2)
        c_star = limit_constant(params)
        summary["constants"] = {"theta": theta(params), "c_star": c_star, "lemma2_constant": branching_constant(params)}
        if not model.discrete_time:
            summary["moments"] = dataclasses.asdict(validate_moments(model, law.alpha))
    else:
        exponent = 2.0
        params = TheoryParams(beta=cfg.beta, eta2=eta2, sigma2=law.sigma2)
        c_star = finite_variance_constant(params, discrete=cfg.mode == "discrete")
        summary["constants"] = {"finite_variance_constant": c_star, "sigma2": law.sigma2, "eta2": eta2}
    scale = est.x_grid**exponent
    rows = zip(
        est.x_grid, [est.n_trees] * len(est.x_grid), est.counts_low, est.counts_high,
        est.p_low, est.p_high, est.ci_lo, est.ci_hi, scale * est.p_low, scale * est.p_high,
    )
    header = ["x", "n", "count_low", "count_high", "p_low", "p_high", "ci_lo", "ci_hi", "scaled_low", "scaled_high"]
    window = (cfg.fit_min or est.x_grid[0], cfg.fit_max or est.x_grid[-1])
    summary["censored_fraction"] = est.censored_fraction
    summary["stopped_fraction"] = float(out.stopped_early.mean())
    summary["particles_created"] = int(out.particles_created.sum())
    checks = []
    try:
        slope, se = fit_exponent(est, window)
        summary["fit"] = {"slope": slope, "stderr": se, "expected": -exponent, "window": list(window)}
        checks.append(_check("exponent", slope, [-exponent - cfg.slope_tol, -exponent + cfg.slope_tol],
                             abs(slope + exponent) <= cfg.slope_tol))
    except BranchingError as e:
        summary["fit"] = {"error": str(e)}
        checks.append(_check("exponent", None, [-exponent - cfg.slope_tol, -exponent + cfg.slope_tol], False))
    tol = 0.25 if cfg.assert_tol is None else cfg.assert_tol
    table = compare_constant(est, exponent, c_star)
    summary["constant_table"] = [r._asdict() for r in table]
    for r in table:
        if window[0] <= r.x <= window[1]:
            checks.append(_check(f"constant@x={fmt(r.x)}", r.rel_dev, [-tol, tol], abs(r.rel_dev) <= tol))
    summary["checks"] = checks
    return header, rows


def _run_fixed_point(cfg, summary):
    law = build_law(cfg)
    step = (cfg.step_values, cfg.step_probs)
    model = lattice_walk(*step)
    res = discrete_fixed_point(law, step, cfg.x_max, tol=cfg.tol)
    c = finite_variance_constant(TheoryParams(eta2=model.eta2_total, sigma2=law.sigma2), discrete=True)
    x = res.x
    scaled = x.astype(float) ** 2 * res.v
    summary["constants"] = {"finite_variance_constant": c, "sigma2": law.sigma2, "eta2": model.eta2_total}
    summary["iterations"] = res.iterations
    tol = 0.10 if cfg.assert_tol is None else cfg.assert_tol
    win = (x >= cfg.eval_min) & (x <= cfg.eval_max)
    dev = float(np.max(np.abs(scaled[win] - c) / c))
    summary["checks"] = [_check("scaled_window_max_rel_dev", dev, tol, dev <= tol)]
    return ["x", "v", "scaled"], zip(x, res.v, scaled)


def _run_bvp(cfg, summary):
    params = _stable_params(cfg)
    th = theta(params)
    y_max = cfg.y_max if cfg.y_max is not None else 40.0 / th
    sol = solve_bvp_shooting(params, y_max, cfg.grid_step)
    closed = phi_closed_form(sol.y, params)
    err = np.abs(sol.phi - closed)
    half = sol.y <= 0.5 * y_max
    max_err = float(err[half].max())
    summary["constants"] = {"theta": th, "c_star": limit_constant(params)}
    summary["bvp"] = {"slope": sol.slope, "expected_slope": -2.0 * th / (cfg.alpha - 1.0),
                      "y_max": y_max, "step": sol.step, "bisections": sol.iterations}
    tol = 1e-6 if cfg.assert_tol is None else cfg.assert_tol
    summary["checks"] = [_check("max_abs_err_half_window", max_err, tol, max_err <= tol)]
    return ["y", "phi_num", "phi_closed", "abs_err"], zip(sol.y, sol.phi, closed, err)


def _run_theory_table(cfg, summary):
    params = _stable_params(cfg)
    th = theta(params)
    c_star = limit_constant(params)
    consts = {
        "theta": th,
        "c_star": c_star,
        "lemma2_constant": branching_constant(params),
        "exponent": 2.0 / (cfg.alpha - 1.0),
        "r_threshold": 2.0 * cfg.alpha / (cfg.alpha - 1.0),
        "phi_prime_0": -2.0 * th / (cfg.alpha - 1.0),
    }
    law = make_explicit(cfg.p) if cfg.offspring == "explicit" else None
    if law is not None:
        fv = TheoryParams(beta=cfg.beta, eta2=cfg.eta2, sigma2=law.sigma2)
        consts["finite_variance_discrete"] = finite_variance_constant(fv, True)
        consts["finite_variance_continuous"] = finite_variance_constant(fv, False)
    summary["constants"] = consts
    ident = abs(c_star - th ** (-2.0 / (cfg.alpha - 1.0))) / c_star
    summary["checks"] = [_check("c_star_theta_identity", ident, 1e-12, ident <= 1e-12)]
    return ["name", "value"], [(k, v) for k, v in consts.items()]


def _run_lemma2(cfg, summary):
    law = make_stable_tail(cfg.alpha, cfg.kappa)
    c = lemma2_constant(law, cfg.beta)
    rows, checks = [], []
    for v, tol in zip(cfg.lemma2_v, cfg.lemma2_tol):
        fv = f_of_v(law, cfg.beta, v)
        ratio = fv / v ** (cfg.alpha - 1.0)
        rel = abs(ratio - c) / c
        rows.append((v, fv, ratio, c, rel))
        checks.append(_check(f"lemma2@v={fmt(v)}", rel, tol, rel <= tol))
    summary["constants"] = {"lemma2_constant": c}
    summary["checks"] = checks
    return ["v", "f_v", "ratio", "constant", "rel_err"], rows


_RUNNERS = {
    "tail-mc": _run_tail_mc,
    "fixed-point": _run_fixed_point,
    "bvp": _run_bvp,
    "theory-table": _run_theory_table,
    "lemma2-check": _run_lemma2,
}


def _csv_row_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in r])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def run(cfg: RunConfig) -> tuple[str, dict]:
    """Execute ``cfg``; returns the CSV text and the JSON summary (also written to disk if configured)."""
    t0 = time.perf_counter()
    summary = {
        "version": __version__,
        "experiment": cfg.experiment,
        "config": dataclasses.asdict(cfg),
        "master_seed": cfg.seed,
    }
    header, rows = _RUNNERS[cfg.experiment](cfg, summary)
    text = _csv_row_text(header, rows)
    summary["wall_time_s"] = time.perf_counter() - t0
    summary["all_checks_pass"] = all(c["pass"] for c in summary.get("checks", []))
    summary = _jsonable(summary)
    if cfg.out_csv:
        Path(cfg.out_csv).write_text(text)
    if cfg.out_json:
        Path(cfg.out_json).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return text, summary


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stablebranch", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="flat JSON file with RunConfig keys")
    ap.add_argument("--assert", dest="assert_", action="store_true", help="exit 4 when any check fails")
    ap.add_argument("--seed", dest="seed")
    for name in _FIELDS:
        if name == "seed":
            continue
        flags = ["--" + name.replace("_", "-")]
        if "_" in name:
            flags.append("--" + name)
        ap.add_argument(*flags, dest=name, default=None)
    return ap


def _error(kind, e, code):
    payload = {"error": type(e).__name__, "kind": kind, "message": str(e)}
    if getattr(e, "field", None) is not None:
        payload["field"] = e.field
    if getattr(e, "position", None) is not None:
        payload["position"] = list(e.position)
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    ap = build_parser()
    ns = ap.parse_args(argv)
    overrides = {k: v for k, v in vars(ns).items() if k in _FIELDS}
    try:
        cfg = load_config(ns.config, overrides)
    except (ParseError, ValidationError, OSError) as e:
        return _error("config", e, 2)
    try:
        text, summary = run(cfg)
    except BranchingError as e:
        return _error("runtime", e, 3)
    if not cfg.out_csv:
        sys.stdout.write(text)
    if not cfg.out_json:
        print(json.dumps(summary, indent=2, sort_keys=True))
    if ns.assert_ and not summary["all_checks_pass"]:
        return 4
    return 0
