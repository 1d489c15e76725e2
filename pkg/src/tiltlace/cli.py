"""Command-line front end.

Usage::

    tiltlace COMMAND --config run.ini [--seed S] [--threads T] [--out DIR] [--set section.key=value ...]

The config is an INI file with a ``[tilt]`` section (TiltParams fields,
``u_star2`` required), an ``[experiment]`` section (ExperimentConfig
fields) and optional per-command sections. Values are Python literals.
Every run writes ``results.csv`` (a comment line with units and the
manifest hash, then a header row) and ``manifest.json``.

Exit codes: 0 success, 2 invalid configuration (nothing computed), 3 an
invariant of the run was violated.
"""
from __future__ import annotations

import argparse
import ast
import configparser
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict

import numpy as np

from . import __version__
from .experiments import (ExperimentConfig, coupling_check, disconnect_direct, disconnect_is, disconnect_tilted,
                          domination_report, scan_alpha_beta)
from .interlace import importance_weight, sample_interlacement, sample_tilted_interlacement
from .lattice import ShapeSpec, SiteSet, box
from .potential import capacity, free_green
from .tilt import TiltParams, build_profile, dirichlet_scan, entropy
from .walk import RngStream

log = logging.getLogger("tiltlace")

COMMANDS = ("green", "capacity", "tilt-build", "entropy", "dirichlet-scan", "sample", "disconnect-direct",
            "disconnect-tilted", "disconnect-is", "domination", "alpha-beta", "coupling-check")

TILT_KEYS = ("u", "u_star2", "epsilon", "delta", "eta", "r_U", "N", "resolution")
EXPERIMENT_KEYS = ("window_radius", "N_list", "replicas", "escape_tol", "exponents", "window_norm", "batch_size")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _literal(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text.strip()


def load_config(path: str | None, overrides=()) -> dict:
    """Read the INI file and apply ``section.key=value`` overrides; values as Python literals."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        cp.read(path)
    out = {s: {k: _literal(v) for k, v in cp.items(s)} for s in cp.sections()}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        key, val = item.split("=", 1)
        sec, k = key.split(".", 1)
        out.setdefault(sec, {})[k] = _literal(val)
    return out


def _shapes(sec: dict):
    if "shapes" in sec:
        return tuple(ShapeSpec(*s) for s in sec["shapes"])
    kind = sec.get("shape", "ball")
    d = int(sec.get("d", 3))
    center = tuple(sec.get("center", (0.0,) * d))
    size = float(sec.get("size", 0.0 if kind == "point" else 1.0))
    return ShapeSpec(kind, center, size)


def tilt_params(conf: dict) -> TiltParams:
    """TiltParams from the ``[tilt]`` section; every invariant is checked here."""
    sec = conf.get("tilt")
    if sec is None:
        raise ConfigError("missing [tilt] section")
    if "u_star2" not in sec:
        raise ConfigError("u_star2 (the critical level u_**) is required in [tilt]")
    missing = [k for k in ("u", "epsilon", "delta", "eta", "r_U", "N") if k not in sec]
    if missing:
        raise ConfigError(f"missing [tilt] keys: {', '.join(missing)}")
    kw = {k: sec[k] for k in TILT_KEYS if k in sec}
    try:
        return TiltParams(shape=_shapes(sec), **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def experiment_config(conf: dict, seed: int | None = None, threads: int | None = None) -> ExperimentConfig:
    tp = tilt_params(conf)
    sec = dict(conf.get("experiment", {}))
    kw = {k: sec[k] for k in EXPERIMENT_KEYS if k in sec}
    kw.setdefault("window_radius", int(math.floor(tp.r_Utilde * max([tp.N] + list(kw.get("N_list", ()))))) + 1)
    kw["seed"] = int(seed if seed is not None else sec.get("seed", 0))
    kw["threads"] = int(threads if threads is not None else sec.get("threads", 1))
    try:
        return ExperimentConfig(tp, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (tuple, list, np.ndarray)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, ShapeSpec):
        return {"kind": obj.kind, "center": list(obj.center), "size": obj.size}
    return obj


def manifest_hash(core: dict) -> str:
    return hashlib.sha256(json.dumps(_jsonable(core), sort_keys=True).encode()).hexdigest()


def write_results(out_dir: str, command: str, columns: list, rows: list, units: str, core: dict,
                  extra: dict | None = None) -> str:
    """Write results.csv and manifest.json; return the manifest hash."""
    os.makedirs(out_dir, exist_ok=True)
    h = manifest_hash(core)
    csv_path = os.path.join(out_dir, "results.csv")
    with open(csv_path, "w", newline="") as fh:
        fh.write(f"# tiltlace {command}; units: {units}; manifest_sha256={h}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    man = dict(core)
    man.update({"manifest_sha256": h, "outputs": [csv_path, os.path.join(out_dir, "manifest.json")],
                "timestamp_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())})
    if extra:
        man["report"] = extra
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(_jsonable(man), fh, indent=2, sort_keys=True)
    return h


# ---------------------------------------------------------------------------
# commands; each returns (columns, rows, units, summary line, violations, report)
# ---------------------------------------------------------------------------

def _cmd_green(conf, seed, threads):
    sec = conf.get("green", {})
    pairs = sec.get("pairs", [((0, 0, 0), (0, 0, 0))])
    d = len(pairs[0][0])
    G = free_green(d)
    rows = []
    for x, y in pairs:
        z = np.subtract(y, x)[None]
        rows.append((tuple(x), tuple(y), float(G(z)[0]), float(G.error_bound(z)[0])))
    return (["x", "y", "g", "error_bound"], rows, "g in expected time units",
            f"g{rows[0][0]},{rows[0][1]} = {rows[0][2]:.6f}", [], None)


def _site_set(sec: dict, d: int = 3) -> SiteSet:
    if "sites_file" in sec:
        with open(sec["sites_file"]) as fh:
            return SiteSet.from_text(fh.read())
    if "sites" in sec:
        return SiteSet(np.asarray(sec["sites"], dtype=np.int64))
    if "box_radius" in sec:
        return box(tuple(sec.get("center", (0,) * d)), sec["box_radius"])
    return SiteSet(np.zeros((1, d), dtype=np.int64))


def _cmd_capacity(conf, seed, threads):
    M = _site_set(conf.get("capacity", {}))
    cap = capacity(M)
    return (["size", "capacity"], [(len(M), cap)], "capacity (dimensionless)", f"cap = {cap:.6f}", [], None)


def _cmd_tilt_build(conf, seed, threads):
    p = tilt_params(conf)
    prof = build_profile(p)
    R = int(math.ceil(max(prof.support_radius, 0))) + 2
    pts = np.zeros((R + 1, p.d), dtype=np.int64)
    pts[:, 0] = np.arange(R + 1)
    f, lam, V = prof.f(pts), prof.lam(pts), prof.V(pts)
    rows = [(tuple(pts[i]), f[i], V[i], lam[i]) for i in range(len(pts))]
    return (["site", "f", "V_per_time", "lambda"], rows, "V per unit time; f, lambda dimensionless",
            f"profile N={p.N}: plateau {p.plateau:.6f}, support radius {prof.support_radius:.3f}", [], None)


def _cmd_entropy(conf, seed, threads):
    p = tilt_params(conf)
    Ns = conf.get("entropy", {}).get("N_list", [p.N])
    rows, viol = [], []
    for N in Ns:
        Hd, Hf = entropy(build_profile(p.with_N(N)))
        rel = abs(Hd - Hf) / abs(Hf) if Hf else abs(Hd - Hf)
        rows.append((N, Hd, Hf, rel))
        if rel > 1e-8:
            viol.append(f"entropy identity off by {rel:.2e} at N={N}")
    return (["N", "H_direct", "H_formula", "relative_difference"], rows, "relative entropy (nats)",
            f"H = {rows[-1][2]:.10g} (N={rows[-1][0]})", viol, None)


def _cmd_dirichlet_scan(conf, seed, threads):
    p = tilt_params(conf)
    Ns = conf.get("dirichlet-scan", {}).get("N_list", conf.get("experiment", {}).get("N_list", [p.N]))
    rows = [(r.N, r.scaled_energy, r.target, r.mollified_target) for r in dirichlet_scan(p, Ns)]
    return (["N", "energy_over_N^(d-2)", "target", "mollified_target"], rows, "Dirichlet energy per N^(d-2)",
            f"E/N^(d-2) = {rows[-1][1]:.6f} vs target {rows[-1][2]:.6f}", [], None)


def _cmd_sample(conf, seed, threads):
    cfg = experiment_config(conf, seed, threads)
    sec = conf.get("sample", {})
    n = int(sec.get("count", 10))
    flavor = sec.get("flavor", "standard")
    p = cfg.params()
    M = box((0,) * p.d, cfg.window_radius)
    prof = build_profile(p) if flavor == "tilted" or sec.get("weights", False) else None
    rows = []
    for i in range(n):
        rng = RngStream(cfg.seed, i)
        if flavor == "tilted":
            s = sample_tilted_interlacement(M, prof, rng, cfg.escape_tol)
        else:
            s = sample_interlacement(M, float(sec.get("u", p.u)), rng, cfg.escape_tol, profile=prof)
        w = importance_weight(s, prof) if prof is not None else 1.0
        rows.append((s.seed, s.stream, s.count, len(s.trace), w, s.count * s.escape_tol))
    return (["seed", "stream", "count", "trace_size", "weight", "bias_bound"], rows, "counts (sites, trajectories)",
            f"{n} {flavor} samples, mean count {np.mean([r[2] for r in rows]):.3f}", [], None)


def _est_row(tag, N, u, r):
    return (tag, N, u, r.estimate, r.std_error, r.ci[0], r.ci[1], r.n, r.bias_bound, r.seed, r.log_scale,
            "; ".join(r.flags))


EST_COLS = ["experiment", "N", "u", "estimate", "std_error", "ci_low", "ci_high", "n", "bias_bound", "seed",
            "log_scale", "flags"]


def _cmd_disconnect_direct(conf, seed, threads):
    cfg = experiment_config(conf, seed, threads)
    sec = conf.get("disconnect-direct", {})
    us = sec.get("u", cfg.tilt.u)
    us = list(us) if isinstance(us, (list, tuple)) else [us]
    N = int(sec.get("N", cfg.tilt.N))
    res = disconnect_direct(cfg, us, N)
    rows = [_est_row("disconnect-direct", N, u, r) for u, r in zip(us, res)]
    return EST_COLS, rows, "probability", f"P[A_N] = {res[-1].estimate:.6g} +- {res[-1].std_error:.2g}", [], None


def _cmd_disconnect_tilted(conf, seed, threads):
    cfg = experiment_config(conf, seed, threads)
    tab = disconnect_tilted(cfg)
    rows = [_est_row("disconnect-tilted", N, r.extra["u"], r) for N, r in tab.rows]
    viol = [f"trend inconclusive: {f}" for f in tab.flags]
    est = ", ".join(f"N={N}: {r.estimate:.4f}" for N, r in tab.rows)
    return EST_COLS, rows, "probability", f"tilted disconnection {est}", viol, {"flags": tab.flags}


def _cmd_disconnect_is(conf, seed, threads):
    cfg = experiment_config(conf, seed, threads)
    sec = conf.get("disconnect-is", {})
    N = int(sec.get("N", cfg.tilt.N))
    u = float(sec.get("u", cfg.tilt.u))
    r = disconnect_is(cfg, u, N)
    viol = [f for f in r.flags if f.startswith("effective sample size")]
    cols = EST_COLS + ["tilted_frequency", "entropy", "entropy_bound", "asymptotic_target", "ess"]
    row = _est_row("disconnect-is", N, u, r) + tuple(r.extra[k] for k in cols[-5:])
    return cols, [row], "log probability", f"log P[A_N] = {r.estimate:.6g} +- {r.std_error:.2g}", viol, None


def _cmd_domination(conf, seed, threads):
    cfg = experiment_config(conf, seed, threads)
    sec = conf.get("domination", {})
    N = int(sec.get("N", cfg.tilt.N))
    rep = domination_report(cfg, N, int(sec.get("centres", 3)), int(sec.get("walks", 1000)), int(sec.get("starts", 6)))
    cols = ["N", "centre", "B3_size", "cap_B3", "occupation_max", "beta", "beta_upper", "tilted_cap_lower",
            "capacity_margin", "equilibrium_margin", "entrance_ratio", "entrance_margin", "occupation_residual"]
    rows = [(N,) + tuple(asdict(r).values()) for r in rep.rows]
    viol = []
    if rep.occupation_residual > 1e-6:
        viol.append(f"occupation identity residual {rep.occupation_residual:.2e} > 1e-6")
    report = {"epsilon_prime": rep.epsilon_prime, "tilted_occupation_residual": rep.tilted_occupation_residual,
              "tilted_check_N": rep.tilted_check_N, "fence_size": rep.fence_size, "notes": rep.notes,
              "margins_positive": rep.margins_positive}
    return (cols, rows, "capacities and measures (dimensionless)",
            f"margins positive: {rep.margins_positive}; residual {rep.occupation_residual:.2e}", viol, report)


def _cmd_alpha_beta(conf, seed, threads):
    cfg = experiment_config(conf, seed, threads)
    sec = conf.get("alpha-beta", {})
    rows, flags = scan_alpha_beta(cfg, sec.get("N_list", None), float(sec.get("c1", 2.0)), int(sec.get("walks", 400)),
                                  int(sec.get("starts", 4)), bool(sec.get("beta", True)))
    cols = ["N", "alpha", "beta", "beta_se", "beta_simple", "beta_simple_se"]
    viol = [f for f in flags if f.startswith("alpha")]
    return (cols, [tuple(asdict(r).values()) for r in rows], "alpha, beta dimensionless",
            "alpha: " + ", ".join(f"{r.alpha:.4f}" for r in rows), viol, {"flags": flags})


def _cmd_coupling(conf, seed, threads):
    cfg = experiment_config(conf, seed, threads)
    sec = conf.get("coupling-check", {})
    N = int(sec.get("N", cfg.tilt.N))
    rep = coupling_check(cfg, N, sec.get("level", None), int(sec.get("panel", 20)))
    cols = ["event", "tilted", "tilted_se", "standard", "standard_se", "violation"]
    rows = [(e.name, e.tilted, e.tilted_se, e.standard, e.standard_se, e.violation) for e in rep.events]
    rows.append(("trace_mean", rep.trace_mean_tilted, rep.trace_mean_tilted_se, rep.trace_mean_standard,
                 rep.trace_mean_standard_se, not rep.trace_dominates))
    viol = [f"panel violation: {v}" for v in rep.violations]
    if not rep.trace_dominates:
        viol.append("trace cardinality mean not dominated")
    return (cols, rows, "frequencies", f"{len(rep.violations)} violations over {len(rep.events)} events", viol,
            {"centre": rep.centre, "comparison_level": rep.comparison_level})


HANDLERS = {"green": _cmd_green, "capacity": _cmd_capacity, "tilt-build": _cmd_tilt_build, "entropy": _cmd_entropy,
            "dirichlet-scan": _cmd_dirichlet_scan, "sample": _cmd_sample, "disconnect-direct": _cmd_disconnect_direct,
            "disconnect-tilted": _cmd_disconnect_tilted, "disconnect-is": _cmd_disconnect_is,
            "domination": _cmd_domination, "alpha-beta": _cmd_alpha_beta, "coupling-check": _cmd_coupling}

NEEDS_TILT = set(COMMANDS) - {"green", "capacity"}


def run(command: str, config_path: str | None, overrides=(), seed: int | None = None, threads: int | None = None,
        out: str = "out") -> int:
    """Validate, run one command, write outputs; return the exit status."""
    if command not in HANDLERS:
        print(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}", file=sys.stderr)
        return 2
    try:
        conf = load_config(config_path, overrides)
        if command in NEEDS_TILT:
            tilt_params(conf)
            if command not in ("tilt-build", "entropy", "dirichlet-scan"):
                experiment_config(conf, seed, threads)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2
    cols, rows, units, summary, viol, report = HANDLERS[command](conf, seed, threads)
    core = {"command": command, "config": conf, "version": __version__,
            "seed": seed if seed is not None else conf.get("experiment", {}).get("seed", 0)}
    write_results(out, command, cols, rows, units, core, {"violations": viol, **(report or {})})
    print(summary)
    for v in viol:
        print(f"invariant violated: {v}", file=sys.stderr)
    return 3 if viol else 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="tiltlace", description="Tilted random interlacements toolkit")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--out", default="out")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
    ap.add_argument("-v", "--verbose", action="store_true")
    a = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return run(a.command, a.config, a.overrides, a.seed, a.threads, a.out)


if __name__ == "__main__":
    sys.exit(main())
