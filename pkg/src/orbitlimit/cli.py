"""Command line entry point: ``orbitlimit run CONFIG`` and ``orbitlimit validate CONFIG``.

Every run writes ``<stem>.json`` (the report, byte-identical for identical
configs), ``<stem>.csv`` (plot data) and ``<stem>.meta.json`` (timestamps and
versions).  Exit status: 0 pass, 1 error, 2 certificate failure.
"""
import argparse
import csv
import io
import json
import math
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .action import (build_tubular, criticality_components, default_epsilon, estimate_kappa,
                     period_bound_certificate, rabinowitz_action)
from .config import build_mane_problem, build_system, load_config
from .continuation import OrbitCylinder, continue_family, envelope_check, synthetic_cylinder
from .errors import OrbitLimitError, ResidualError, StabilityViolation
from .limitset import extract_limit_set
from .mane import mane_estimate
from .mollify import Mollifiers
from .orbit import check_residuals, find_periodic, orbit_to_record, reeb_normalize
from .symplectic import check_stability, sample_level_set

EXIT_OK, EXIT_ERROR, EXIT_CERTIFICATE = 0, 1, 2


def _clean(obj):
    """JSON-safe copy: numpy scalars become Python numbers, non-finite floats strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(obj, complex):
        return [_clean(obj.real), _clean(obj.imag)]
    return obj


def dumps(report):
    return json.dumps(_clean(report), sort_keys=True, indent=2) + "\n"


def _rows_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _samples_csv(orbit):
    n = orbit.n
    head = ["t"] + [f"q{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)]
    rows = [[k / orbit.N] + list(x) for k, x in enumerate(orbit.samples)]
    return _rows_csv(head, rows)


# --------------------------------------------------------------------------
# tasks; each returns (report, csv_text, passed)


def _sigma0(cfg):
    return float(cfg.task.sigma if cfg.task.sigma is not None else cfg.system.sigma_range[0])


def _start_orbit(cfg, system, structure):
    num = cfg.numerics
    orb = find_periodic(system, structure, np.array(cfg.task.seed_point, dtype=float), cfg.task.tau_guess,
                        _sigma0(cfg), N=num.samples, tol=num.newton_tol, integ_tol=num.integration_tol,
                        floquet_tol=num.floquet_tol)
    return orb


def _epsilon(cfg, system, structure, sigma):
    if cfg.numerics.epsilon is not None:
        return float(cfg.numerics.epsilon)
    pts = sample_level_set(system, sigma, 4, seed=cfg.numerics.seed, scale=cfg.numerics.sample_scale)
    return default_epsilon(system, structure, sigma, pts)


def _kappa(cfg, system, structure, lo, hi):
    num = cfg.numerics
    eps = _epsilon(cfg, system, structure, lo)
    grid = np.linspace(lo, hi, num.kappa_points) if hi > lo else np.array([lo])
    return estimate_kappa(system, structure, grid, eps, sample_count=num.kappa_samples, seed=num.seed,
                          sample_scale=num.sample_scale), eps


def task_check_stability(cfg):
    system, structure = build_system(cfg)
    lo, hi = cfg.system.sigma_range
    if cfg.task.sigma is not None:
        sigmas = [float(cfg.task.sigma)]
    else:
        sigmas = np.linspace(lo, hi, cfg.task.stability_points) if hi > lo else [lo]
    rows, passed, failure = [], True, None
    for k, s in enumerate(sigmas):
        pts = sample_level_set(system, s, cfg.task.stability_samples, seed=cfg.numerics.seed + k,
                               scale=cfg.numerics.sample_scale)
        try:
            rows.append(check_stability(system, structure, s, pts, cfg.numerics.stability_tol))
        except StabilityViolation as exc:
            passed, failure = False, f"sigma={float(s)!r}: {exc}"
            break
    report = {"task": "check-stability", "pass": passed, "tolerance": cfg.numerics.stability_tol,
              "per_sigma": rows, "failure": failure}
    text = _rows_csv(["sigma", "f_min", "f_max", "max_residual"],
                     [[r["sigma"], r["f_min"], r["f_max"], r["max_residual"]] for r in rows])
    return report, text, passed


def task_find_orbit(cfg):
    system, structure = build_system(cfg)
    orb = _start_orbit(cfg, system, structure)
    if system.X is not None:
        orb = reeb_normalize(orb, system, structure, cfg.numerics.integration_tol)
    try:
        check_residuals(orb)
        passed, failure = True, None
    except ResidualError as exc:
        passed, failure = False, str(exc)
    report = {"task": "find-orbit", "pass": passed, "failure": failure, "orbit": orbit_to_record(orb)}
    return report, _samples_csv(orb), passed


def _continue(cfg, system, structure):
    num = cfg.numerics
    start = _start_orbit(cfg, system, structure)
    target = cfg.task.sigma_target if cfg.task.sigma_target is not None else cfg.system.sigma_range[1]
    return continue_family(start, system, structure, float(target), max_step=num.max_step,
                           min_step=num.min_step, N=num.samples, tol=num.newton_tol,
                           integ_tol=num.integration_tol, floquet_tol=num.floquet_tol)


def task_continue(cfg):
    system, structure = build_system(cfg)
    cyl = _continue(cfg, system, structure)
    bounds, eps = _kappa(cfg, system, structure, cyl.sigma_start, cyl.sigma_end)
    env = envelope_check(cyl, bounds.kappa, cfg.numerics.envelope_slack)
    cert = period_bound_certificate(cyl, bounds) if cyl.normalization == "reeb" else None
    passed = env.passed and (cert is None or cert.passed)
    report = {"task": "continue", "pass": passed, "epsilon": eps, "kappa": bounds.to_record(),
              "envelope": env.to_record(), "certificate": None if cert is None else cert.to_record(),
              "cylinder": cyl.to_record(), "log": cyl.log}
    return report, cyl.to_csv(bounds.kappa), passed


def _synthetic(syn):
    lo, hi = syn.sigmas
    s_inf, tau0, rate = syn.sigma_infinity, syn.tau0, syn.rate
    if syn.kind == "blowup":
        def tau_fn(s):
            return tau0 / (1.0 - s / s_inf) ** rate
    elif syn.kind == "exponential":
        def tau_fn(s):
            return tau0 * math.exp(rate * s)
    else:
        def tau_fn(s):
            return tau0
    return synthetic_cylinder(np.linspace(lo, hi, syn.count), tau_fn)


def task_limit_set(cfg, config_dir):
    num = cfg.numerics
    system = structure = None
    bounds = None
    if cfg.task.synthetic is not None:
        cyl = _synthetic(cfg.task.synthetic)
        s_inf = cfg.task.sigma_infinity or cfg.task.synthetic.sigma_infinity
    elif cfg.task.cylinder is not None:
        path = Path(cfg.task.cylinder)
        path = path if path.is_absolute() else config_dir / path
        cyl = OrbitCylinder.from_record(json.loads(path.read_text()))
        s_inf = cfg.task.sigma_infinity
        if cfg.system is not None:
            system, structure = build_system(cfg)
    else:
        system, structure = build_system(cfg)
        cyl = _continue(cfg, system, structure)
        s_inf = cfg.task.sigma_infinity
    if cfg.task.kappa is not None:
        kappa = float(cfg.task.kappa)
    elif system is not None:
        bounds, _ = _kappa(cfg, system, structure, cyl.sigma_start, cyl.sigma_end)
        kappa = bounds.kappa
    else:
        kappa = None
    env = envelope_check(cyl, kappa, num.envelope_slack) if kappa is not None else None
    cert = period_bound_certificate(cyl, kappa) if kappa is not None and cyl.normalization == "reeb" else None
    lim = extract_limit_set(cyl, num.tail_fraction, num.eps_cluster, system, structure, s_inf,
                            integ_tol=num.integration_tol)
    certified = (env is None or env.passed) and (cert is None or cert.passed)
    # a certified cylinder must have a nonempty connected limit set
    passed = certified and lim.nonempty and lim.connected
    report = {"task": "limit-set", "pass": passed, "kappa": None if bounds is None else bounds.to_record(),
              "envelope": None if env is None else env.to_record(),
              "certificate": None if cert is None else cert.to_record(),
              "limit_set": lim.to_record(),
              "cylinder": {"sigma_start": cyl.sigma_start, "sigma_end": cyl.sigma_end,
                           "termination": cyl.termination, "orbits": len(cyl)}}
    if env is not None and not env.passed:
        report["failure"] = "envelope check failed: periods leave the exponential bound"
    elif not passed:
        report["failure"] = "limit set is empty or disconnected"
    return report, lim.distances_csv(), passed


def task_action_report(cfg):
    num = cfg.numerics
    system, structure = build_system(cfg)
    if cfg.task.sigma_target is not None:
        orbits = list(_continue(cfg, system, structure).orbits)
    else:
        orbits = [reeb_normalize(_start_orbit(cfg, system, structure), system, structure,
                                 num.integration_tol)]
    rows, records, passed = [], [], True
    for orb in orbits:
        eps = _epsilon(cfg, system, structure, orb.sigma)
        moll = Mollifiers(eps)
        chart = build_tubular(system, structure, orb.sigma, eps, orb.samples[:: max(1, orb.N // 8)],
                              num.stability_tol)
        A = rabinowitz_action(orb, chart, moll, system, structure)
        comps = criticality_components(orb, chart, moll, system, structure, seed=num.seed)
        defect = abs(A - orb.tau)
        ok = defect <= num.action_tol * (1.0 + orb.tau)
        passed = passed and ok
        rows.append([orb.sigma, orb.tau, A, defect])
        records.append({"sigma": orb.sigma, "tau": orb.tau, "action": A, "defect": defect,
                        "epsilon": eps, "criticality": comps, "pass": ok})
    report = {"task": "action-report", "pass": passed, "tolerance": num.action_tol, "orbits": records}
    return report, _rows_csv(["sigma", "tau", "action", "defect"], rows), passed


def task_mane(cfg):
    num = cfg.numerics
    prob = build_mane_problem(cfg)
    res = mane_estimate(prob, degree=num.fourier_degree, grid=num.grid, restarts=num.restarts,
                        seed=num.seed)
    rec = res.to_record()
    report = {"task": "mane", "pass": True, "c": rec["c"], "degree": rec["degree"], "grid": rec["grid"],
              "converged": rec["converged"], "restarts_agreeing": rec["restarts_agreeing"],
              "restarts": rec["restarts"], "certificate": rec["certificate"]}
    text = _rows_csv(["restart", "value"], [[i, v] for i, v in enumerate(res.values)])
    return report, text, True


def execute(cfg, config_dir=Path(".")):
    kind = cfg.task.kind
    if kind == "limit-set":
        return task_limit_set(cfg, Path(config_dir))
    return {
        "check-stability": task_check_stability,
        "find-orbit": task_find_orbit,
        "continue": task_continue,
        "action-report": task_action_report,
        "mane": task_mane,
    }[kind](cfg)


# --------------------------------------------------------------------------


def _write_outputs(cfg, config_path, report, text, started, elapsed, out_dir=None):
    out = Path(out_dir or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    stem = cfg.output.stem or Path(config_path).stem
    written = []
    if "json" in cfg.output.formats:
        p = out / f"{stem}.json"
        p.write_text(dumps(report))
        written.append(p)
    if "csv" in cfg.output.formats and text:
        p = out / f"{stem}.csv"
        p.write_text(text)
        written.append(p)
    meta = {"config": str(config_path), "started": started, "elapsed_seconds": round(elapsed, 3),
            "orbitlimit": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "outputs": [str(p) for p in written]}
    p = out / f"{stem}.meta.json"
    p.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return written + [p]


def cmd_run(args):
    try:
        cfg = load_config(args.config)
    except OrbitLimitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    try:
        report, text, passed = execute(cfg, Path(args.config).resolve().parent)
    except (OrbitLimitError, ValueError, OSError) as exc:
        print(f"error: task {cfg.task.kind} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    written = _write_outputs(cfg, args.config, report, text, started, time.perf_counter() - t0,
                             args.output_dir)
    status = "pass" if passed else "certificate failure"
    print(f"{cfg.task.kind}: {status}")
    if not passed and report.get("failure"):
        print(f"  {report['failure']}")
    for p in written:
        print(f"  wrote {p}")
    return EXIT_OK if passed else EXIT_CERTIFICATE


def cmd_validate(args):
    try:
        cfg = load_config(args.config)
        if cfg.system is not None:
            if cfg.task.kind == "mane":
                build_mane_problem(cfg)
            else:
                build_system(cfg)
    except (OrbitLimitError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print("ok")
    print(yaml.safe_dump(cfg.model_dump(mode="json", exclude_none=True), sort_keys=True), end="")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="orbitlimit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"orbitlimit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="execute the task of a config file")
    run.add_argument("config")
    run.add_argument("--output-dir", default=None, help="override output.directory")
    run.set_defaults(func=cmd_run)
    val = sub.add_parser("validate", help="check schema and expressions only")
    val.add_argument("config")
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
