"""Command line entry point.

    kinlab <subcommand> --config path.json [--out dir] [--seed n] [--dry-run]

Subcommands: simulate, pde, stationary, bounds, experiment {fig1,fig3,fig4,ex48}.
Exit codes: 0 ok, 2 config error, 3 a check failed, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import inspect
import json
import math
import sys
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import bounds, experiments, io, stationary, transport
from .errors import ArgumentError, ConfigError, KinlabError, NumericError
from .experiments import Check, ExperimentReport, mean_flow
from .model import KSchedule, LabelSpace, Potential, ProblemSpec
from .particles import label_chi2_pvalue, simulate
from .pde import Grid1D, solve as pde_solve

__all__ = ["main", "load_config", "validate_config", "resolve", "run_simulate", "run_pde",
           "run_stationary", "run_bounds", "run_experiment", "EXIT_OK", "EXIT_CONFIG",
           "EXIT_CHECK", "EXIT_NUMERIC"]

EXIT_OK, EXIT_CONFIG, EXIT_CHECK, EXIT_NUMERIC = 0, 2, 3, 4
CHI2_LEVEL = 1e-3
# exact labelled transport between two spread 1D sets grows superlinearly
MAX_SPREAD_COMPARE = 1000

_SCHEMA = None


def _schema():
    global _SCHEMA
    if _SCHEMA is None:
        text = resources.files("kinlab").joinpath("spec.schema.json").read_text("utf-8")
        _SCHEMA = json.loads(text)
    return _SCHEMA


def validate_config(cfg):
    """Check cfg against the bundled JSON schema; raise ConfigError on violation."""
    try:
        jsonschema.validate(cfg, _schema())
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError("config invalid at %s: %s" % (where, e.message)) from None
    return cfg


def load_config(path):
    try:
        cfg = json.loads(Path(path).read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError("cannot read config %s: %s" % (path, e)) from None
    return validate_config(cfg)


def _need(cfg, *keys):
    miss = [k for k in keys if k not in cfg]
    if miss:
        raise ConfigError("config is missing %s" % ", ".join(miss))


def _problem(cfg, seed=None):
    _need(cfg, "problem")
    d = dict(cfg["problem"])
    if seed is not None:
        d["seed"] = int(seed)
    try:
        return ProblemSpec.from_dict(d)
    except (ArgumentError, KeyError, TypeError) as e:
        raise ConfigError("bad problem: %s" % e) from None


def _grid(cfg):
    _need(cfg, "grid")
    g = cfg["grid"]
    try:
        return Grid1D(g["a"], g["b"], g["n_cells"])
    except ArgumentError as e:
        raise ConfigError("bad grid: %s" % e) from None


def _times(cfg, default=(0.0, 10.0, 101)):
    t = cfg.get("t")
    if t is None:
        return np.linspace(*default)
    if isinstance(t, dict):
        return np.linspace(t["start"], t["stop"], t["num"])
    return np.asarray(t, float)


def _default_labels_ok(spec):
    w = spec.initial.resolved_label_weights(spec.labels)
    return bool(np.allclose(w, spec.labels.weights, rtol=0, atol=1e-12))


# ------------------------------------------------------------------ simulate

def _simulate_options(cfg):
    return {"n_particles": int(cfg.get("n_particles", 1000)),
            "mode": cfg.get("mode", "event_driven"), "dt": cfg.get("dt"),
            "compare_gradient_flow": bool(cfg.get("compare_gradient_flow", False))}


def _gradient_flow_w2(rec, spec):
    """W2 between each snapshot and the gradient flow of F pushed through mu."""
    p, ls, init = spec.potential, spec.labels, spec.initial
    times = np.asarray(rec.times, float)
    if init.kind == "point":
        Y = mean_flow(p, ls, init.x, times)
        return np.array([transport.w2_to_point_product(x, lab, y, ls)
                         for x, lab, y in zip(rec.positions, rec.label_indices, Y)])
    if spec.dimension != 1 or not p.has_linear_flow:
        raise ConfigError("compare_gradient_flow needs a point initial law, or d=1 "
                          "with a built-in potential")
    if rec.positions[0].shape[0] > MAX_SPREAD_COMPARE:
        raise ConfigError("compare_gradient_flow from a spread initial law is limited to "
                          "n_particles <= %d" % MAX_SPREAD_COMPARE)
    # push the recorded initial positions through the mean flow
    x0 = rec.positions[0][:, 0]
    if times[0] != 0.0:
        raise ConfigError("compare_gradient_flow needs record_times to start at 0")
    Y = mean_flow(p, ls, x0, times)
    n, M = x0.size, ls.M
    out = []
    for x, lab, y in zip(rec.positions, rec.label_indices, Y):
        target = transport.DiscreteMeasure(np.tile(y, M), np.repeat(ls.labels, n, axis=0),
                                           np.repeat(ls.weights, n) / n)
        out.append(transport.w2_discrete(transport.DiscreteMeasure.from_labels(x, lab, ls),
                                         target))
    return np.array(out)


def run_simulate(cfg, out_dir=None, seed=None):
    """Particle run; writes particles.csv (+ simulate_w2.csv when comparing)."""
    t0 = time.perf_counter()
    spec = _problem(cfg, seed)
    opt = _simulate_options(cfg)
    rec = simulate(spec, opt["n_particles"], mode=opt["mode"], dt=opt["dt"],
                   block_size=int(cfg.get("block_size", 4096)))
    rep = ExperimentReport("simulate", spec.to_dict())
    if _default_labels_ok(spec) and spec.labels.M > 1:
        pv = [label_chi2_pvalue(lab, spec.labels) for lab in rec.label_indices]
        rep.checks.append(Check("label_marginal_chi2", min(pv) >= CHI2_LEVEL, min(pv),
                                CHI2_LEVEL))
    res = {"n_particles": opt["n_particles"], "mode": opt["mode"],
           "record_times": list(rec.times),
           "second_moment": [float(np.mean(np.sum(x ** 2, axis=1))) for x in rec.positions]}
    w2 = None
    if opt["compare_gradient_flow"]:
        w2 = _gradient_flow_w2(rec, spec)
        res["w2_gradient_flow"] = w2
    rep.results = res
    if out_dir is not None:
        out = Path(out_dir)
        rep.add_file(io.write_particles_csv(out / "particles.csv", rec))
        if w2 is not None:
            c = bounds.BoundCurve("w2_gradient_flow", rec.times, w2,
                                  {"n_particles": opt["n_particles"]})
            rep.add_file(io.write_bounds_csv(out / "simulate_w2.csv", [c],
                                             {"spec": spec.to_dict()}))
    rep.wall_clock = time.perf_counter() - t0
    return rep


# ------------------------------------------------------------------ pde

def run_pde(cfg, out_dir=None, seed=None):
    """Finite-volume run; writes density.csv with every recorded snapshot."""
    t0 = time.perf_counter()
    spec = _problem(cfg, seed)
    grid = _grid(cfg)
    mode = cfg.get("pde_mode", "kinetic")
    sol = pde_solve(spec, grid, mode=mode, cfl=cfg.get("cfl", 0.9), dt=cfg.get("dt"))
    rep = ExperimentReport("pde", spec.to_dict())
    rep.checks.append(Check("mass_conservation", sol.max_mass_error <= 1e-8,
                            sol.max_mass_error, 1e-8))
    lm = np.array([s.label_masses() for s in sol])
    if mode == "kinetic" and _default_labels_ok(spec):
        dev = float(np.max(np.abs(lm - lm[0])))
        rep.checks.append(Check("label_masses_constant", dev <= 1e-12, dev, 1e-12))
    rep.results = {"dt": sol.dt, "n_steps": sol.n_steps, "max_mass_error": sol.max_mass_error,
                   "times": sol.times, "label_masses": lm,
                   "second_moment": [s.second_moment() for s in sol]}
    if out_dir is not None:
        rep.add_file(io.write_grid_csv(Path(out_dir) / "density.csv", list(sol),
                                       {"spec": spec.to_dict(), "mode": mode, "dt": sol.dt}))
    rep.wall_clock = time.perf_counter() - t0
    return rep


# ------------------------------------------------------------------ stationary

def _stationary_model(cfg):
    """(potential, labels, K, spec or None) for the stationary methods."""
    spec = None
    if "problem" in cfg:
        spec = _problem(cfg, cfg.get("_seed"))
        p, ls = spec.potential, spec.labels
        K = cfg.get("K", spec.schedule.a if spec.schedule.kind == "constant" else None)
    else:
        p = Potential.quadratic_well()
        ls = LabelSpace.bernoulli(cfg.get("p", 0.5))
        K = cfg.get("K")
    if K is None:
        raise ConfigError("stationary needs a constant K (config K or a constant schedule)")
    return p, ls, float(K), spec


def _bernoulli_p(ls):
    s = np.asarray(ls.labels, float).ravel()
    if ls.M != 2 or not np.allclose(s, [1.0, 2.0]):
        raise ConfigError("the analytic state needs labels {1, 2}")
    return float(ls.weights[1])


def run_stationary(cfg, out_dir=None, seed=None):
    """Stationary state by the configured method; writes stationary.csv."""
    t0 = time.perf_counter()
    cfg = dict(cfg, _seed=seed)
    method = cfg.get("method", "analytic")
    p, ls, K, spec = _stationary_model(cfg)
    if method == "analytic":
        if p.kind != "QuadraticWell":
            raise ConfigError("the analytic state exists for QuadraticWell only")
        sd = stationary.analytic_quadratic_stationary(K, _grid(cfg), p=cfg.get("p",
                                                                          _bernoulli_p(ls)))
    elif method == "eigensolver":
        _need(cfg, "eps_sequence")
        sd = stationary.vanishing_viscosity(cfg["eps_sequence"], _grid(cfg), p, ls, K)
    elif method == "pde_longrun":
        if spec is None:
            raise ConfigError("pde_longrun needs a problem")
        sd = stationary.pde_longrun(spec, _grid(cfg), T=cfg.get("T", 50.0))
    else:
        if spec is None:
            raise ConfigError("particle_longrun needs a problem")
        sd = stationary.particle_longrun(spec, int(cfg.get("n_particles", 10000)),
                                         T=cfg.get("T"), mode=cfg.get("mode", "event_driven"),
                                         dt=cfg.get("dt"))
    rep = ExperimentReport("stationary", spec.to_dict() if spec else
                           {"potential": p.to_dict(), "labels": ls.to_dict(), "K": K})
    info = sd.info
    if sd.is_grid:
        rep.checks.append(Check("residual", sd.residual <= 1e-3 * K, sd.residual, 1e-3 * K))
    elif ls.M > 1 and _default_labels_ok(spec):
        pv = label_chi2_pvalue(sd.label_index, ls)
        rep.checks.append(Check("label_marginal_chi2", pv >= CHI2_LEVEL, pv, CHI2_LEVEL))
    rep.results = {"method": method, "lambda": info.get("lambda"), "residual": sd.residual,
                   "eps_sequence": info.get("eps_sequence"),
                   "second_moments": info.get("second_moments", [sd.second_moment()]),
                   "gaps": info.get("gaps"), "mass": sd.mass(), "label_masses": sd.label_masses()}
    if out_dir is not None:
        path = Path(out_dir) / "stationary.csv"
        meta = {"method": method, "K": K}
        if sd.is_grid:
            rep.add_file(io.write_grid_csv(path, [sd.density], meta))
        else:
            rep.add_file(io.write_points_csv(path, sd.x, sd.label_index, sd.weights, meta))
    rep.wall_clock = time.perf_counter() - t0
    return rep


# ------------------------------------------------------------------ bounds

def _convex_decay(t, w2_init, K=0.0, w2_mu=0.0, c=None, alpha=None, delta=None, m=None, L=None):
    if c is None or alpha is None:
        if None in (delta, m, L) or not K:
            raise ConfigError("convex_decay needs (c, alpha) or (delta, m, K, L)")
        c, alpha, _ = bounds.convex_rate(delta, m, K, L)
    return bounds.convex_decay_bound(t, c, alpha, w2_init, K=K, w2_mu=w2_mu)


def _variable_rate(t, m, c_const, schedule, w2_init):
    return bounds.variable_rate_bound(t, m, c_const, KSchedule.from_dict(schedule), w2_init)


BOUNDS = {
    "stability": bounds.stability_bound,
    "convex_decay": _convex_decay,
    "grazing_bound": bounds.grazing_bound,
    "grazing_rate": bounds.grazing_rate,
    "variable_rate": _variable_rate,
    "gronwall": bounds.gronwall_second_moment_bound,
}


def _eval_bound(name, t, params):
    fn = BOUNDS[name]
    try:
        inspect.signature(fn).bind(t, **params)
    except TypeError as e:
        raise ConfigError("bad parameters for %s: %s" % (name, e)) from None
    return fn(t, **params)


def run_bounds(cfg, out_dir=None, seed=None):
    """Evaluate the listed bound curves on the time grid; writes bounds.csv."""
    t0 = time.perf_counter()
    _need(cfg, "bounds")
    t = _times(cfg)
    curves = []
    for item in cfg["bounds"]:
        name = item["name"]
        vals = _eval_bound(name, t, item["params"])
        curves.append(bounds.BoundCurve(item.get("label", name), t, vals * np.ones_like(t),
                                        dict(item["params"])))
    names = [c.name for c in curves]
    if len(set(names)) != len(names):
        raise ConfigError("bound labels must be unique")
    rep = ExperimentReport("bounds", {"t": t, "bounds": cfg["bounds"]})
    rep.results = {c.name: {"final": float(c.values[-1])} for c in curves}
    if out_dir is not None:
        rep.add_file(io.write_bounds_csv(Path(out_dir) / "bounds.csv", curves))
        rep.add_file(io.svg_line_plot(Path(out_dir) / "bounds.svg",
                                      [(c.name, c.t, c.values) for c in curves],
                                      title="bound curves", ylabel="bound"))
    rep.wall_clock = time.perf_counter() - t0
    return rep


# ------------------------------------------------------------------ experiments

def _experiment_options(name, cfg, seed=None):
    opts = dict(cfg.get("options", {}))
    if seed is not None:
        if "seed" not in experiments.defaults(name):
            raise ConfigError("experiment %s is deterministic and takes no seed" % name)
        opts["seed"] = int(seed)
    try:
        return experiments._merge(name, opts)
    except ArgumentError as e:
        raise ConfigError(str(e)) from None


def run_experiment(name, cfg=None, out_dir=None, seed=None):
    if name not in experiments.EXPERIMENTS:
        raise ConfigError("unknown experiment %r" % name)
    opts = _experiment_options(name, cfg or {}, seed)
    return experiments.run_named(name, out_dir=out_dir, **opts)


RUNNERS = {"simulate": run_simulate, "pde": run_pde, "stationary": run_stationary,
           "bounds": run_bounds}


def resolve(command, cfg, seed=None, experiment=None):
    """The fully resolved configuration a run would use (no computation)."""
    if command == "experiment":
        return {"experiment": experiment, "options": _experiment_options(experiment, cfg, seed)}
    out = {"command": command}
    if "problem" in cfg:
        out["problem"] = _problem(cfg, seed).to_dict()
    if command == "simulate":
        out.update(_simulate_options(cfg))
    elif command == "pde":
        out["grid"] = _grid(cfg).to_dict()
        out.update(pde_mode=cfg.get("pde_mode", "kinetic"), cfl=cfg.get("cfl", 0.9),
                   dt=cfg.get("dt"))
    elif command == "stationary":
        p, ls, K, _ = _stationary_model(dict(cfg, _seed=seed))
        out.update(method=cfg.get("method", "analytic"), K=K, potential=p.to_dict(),
                   labels=ls.to_dict())
        for k in ("grid", "eps_sequence", "T", "n_particles"):
            if k in cfg:
                out[k] = cfg[k]
    else:
        _need(cfg, "bounds")
        out.update(t=_times(cfg).tolist(), bounds=cfg["bounds"])
    return out


# ------------------------------------------------------------------ main

def build_parser():
    ap = argparse.ArgumentParser(prog="kinlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON config file")
        sp.add_argument("--out", default="kinlab_out", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the seed")
        sp.add_argument("--dry-run", action="store_true",
                        help="validate and print the resolved config, then exit")

    for name in RUNNERS:
        common(sub.add_parser(name, help="%s run" % name))
    ex = sub.add_parser("experiment", help="canned experiment pipelines")
    ex.add_argument("name", choices=sorted(experiments.EXPERIMENTS))
    common(ex, config_required=False)
    return ap


def _summary(rep, stream):
    for c in rep.checks:
        print("%s %s value=%s threshold=%s" % ("PASS" if c.passed else "FAIL", c.name,
                                               _short(c.value), _short(c.threshold)),
              file=stream)
    print("%s: %s in %.1fs" % (rep.experiment, "ok" if rep.passed else
                               "failed (%s)" % ", ".join(rep.failed()), rep.wall_clock),
          file=stream)


def _short(v):
    v = io.to_jsonable(v)
    return json.dumps(v) if not isinstance(v, float) else "%.6g" % v


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else {}
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        exp = getattr(args, "name", None)
        if args.dry_run:
            resolved = resolve(args.command, cfg, args.seed, exp)
            print(json.dumps(io.to_jsonable(resolved), indent=2, sort_keys=True))
            return EXIT_OK
        if args.command == "experiment":
            rep = run_experiment(exp, cfg, args.out, args.seed)
        else:
            rep = RUNNERS[args.command](cfg, args.out, args.seed)
        rep.write(args.out)
    except ConfigError as e:
        print("config error: %s" % e, file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print("numeric failure: %s: %s" % (type(e).__name__, e), file=sys.stderr)
        return EXIT_NUMERIC
    except KinlabError as e:
        print("config error: %s: %s" % (type(e).__name__, e), file=sys.stderr)
        return EXIT_CONFIG
    _summary(rep, sys.stdout)
    return EXIT_OK if rep.passed else EXIT_CHECK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
