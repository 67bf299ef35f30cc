"""kleinwave <config-path> [--set section.key=value]... [--out DIR] [--threads T]

Writes ``results.csv``, ``summary.json``, ``*.field`` dumps and ``run.log``
into the output directory.  Exit status is 0 for a completed run (lemma
violations are findings), 2 for configuration errors and 1 for operational
failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import functional as F
from . import lemma_lab as lab
from .config import ConfigError, RunConfig, format_config, parse_config, parse_starts
from .discretization import build_radial_grid, write_field
from .minimizer import default_radial_init, minimize_reduced, phi_epsilon, profile_for_domain, symmetric_init
from .potential import ScanParams, verify_hypotheses

SCHEMA_VERSION = 1
log = logging.getLogger("kleinwave")


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\r\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: lab._fmt(row.get(k)) for k in columns})
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# --------------------------------------------------------------------------
# experiments; each returns (csv text, summary dict, {name: (grid, u, extra)})


def _verify_potential(cfg: RunConfig, threads: int):
    p = cfg.potential
    rep = verify_hypotheses(cfg.make_potential(), cfg.domain.dim, ScanParams(p.scan_max, p.scan_points))
    rows = [
        dict(check="W1", ok=rep.w1_ok, value=rep.w1_min_value, at=rep.w1_argmin),
        dict(check="W2", ok=rep.w2_ok, value=rep.w2_value, at=rep.w2_witness),
        dict(check="Np", ok=rep.np_ok, value=rep.np_margin, at=rep.np_worst_s),
        dict(check="quad_bound", ok=rep.quad_bound[0] > 0, value=rep.quad_bound[1], at=rep.quad_bound[0]),
        dict(check="subcritical", ok=rep.subcritical_ok, value=p.p, at=rep.critical_exponent),
    ]
    if rep.growth_ok is not None:
        rows.append(dict(check="W2_strong", ok=rep.growth_ok, value=p.growth_exp, at=rep.growth_radius))
    summary = rep.to_dict()
    summary["verdicts"] = {r["check"]: r["ok"] for r in rows}
    return _csv(["check", "ok", "value", "at"], rows), summary, {}


def _minimize(cfg: RunConfig, threads: int):
    pot, opts, d, c = cfg.make_potential(), cfg.make_options(), cfg.domain, cfg.charge
    if d.shape == "ball" and d.radial:
        grid = build_radial_grid(d.dim, d.rho, int(round(d.n_per_unit * d.rho)))
        spec = F.ChargeSpec(c.sigma, c.eps, d.dim)
        res = minimize_reduced(default_radial_init(grid, spec.C), grid, spec, pot, opts)
    else:
        shape = cfg.make_shape()
        shape.check(d.h)
        grid = shape.grid(d.h)
        spec = F.ChargeSpec(c.sigma, c.eps, 2)
        starts = parse_starts(cfg.scan.starts)
        if isinstance(starts, list) and starts:
            prof = profile_for_domain(shape, spec, pot, d.h, opts)
            u0 = phi_epsilon(starts[0], prof, grid)
            res = minimize_reduced(u0, grid, spec, pot, opts)
        else:
            res = minimize_reduced(symmetric_init(grid, spec.C), grid, spec, pot, opts)
    row = dict(
        shape=d.shape,
        eps=c.eps,
        sigma=c.sigma,
        energy=res.energy,
        omega=res.omega,
        residual=res.residual,
        charge_error=abs(res.charge - spec.C) / spec.C,
        bary_x=float(res.barycenter[0]),
        bary_y=float(res.barycenter[1]) if len(res.barycenter) > 1 else 0.0,
        iters=res.iters,
        converged=res.converged,
    )
    columns = list(row)
    summary = {"result": res.to_dict(), "verdicts": {"converged": res.converged}}
    return _csv(columns, [row]), summary, {"minimizer": (grid, res.u, {"omega": repr(res.omega)})}


def _scan_rho(cfg: RunConfig, threads: int):
    d = cfg.domain
    table, rep = lab.scan_rho(
        d.dim, cfg.charge.eps, cfg.scan.rho_list, cfg.charge.sigma, d.n_per_unit,
        cfg.make_potential(), cfg.make_options(), threads=threads, certify=cfg.scan.certify,
    )
    return table.to_csv(), rep, {}


def _check_scaling(cfg: RunConfig, threads: int):
    sc = cfg.scan
    table, rep = lab.check_scaling(
        cfg.domain.dim, sc.eps_pairs, cfg.domain.rho, cfg.charge.sigma, sc.n,
        cfg.make_potential(), cfg.make_options(), threads=threads,
    )
    return table.to_csv(), rep, {}


def _epsilon_bar(cfg: RunConfig, threads: int):
    d = cfg.domain
    table, rep = lab.find_epsilon_bar(
        d.rho, d.gamma, cfg.charge.sigma, cfg.charge.eps_grid, cfg.make_potential(), d.h,
        cfg.make_options(), threads=threads,
    )
    return table.to_csv(), rep, {}


def _starts_for(cfg: RunConfig, shape):
    starts = parse_starts(cfg.scan.starts)
    if starts == "antipodal":
        return lab.antipodal_starts(shape, cfg.domain.h)
    if starts is None:
        from .discretization import default_starts

        pts = default_starts(shape, cfg.domain.h)
        return lab._thin(pts, cfg.scan.n_starts or None)
    return starts


def _localization(cfg: RunConfig, threads: int):
    shape = cfg.make_shape()
    shape.check(cfg.domain.h)
    table, rep, runs = lab.localization_check(
        shape, cfg.charge.eps, cfg.charge.sigma, cfg.make_potential(), cfg.domain.h,
        cfg.make_options(), starts=_starts_for(cfg, shape), threads=threads,
    )
    return table.to_csv(), rep, {}


def _multiplicity(cfg: RunConfig, threads: int):
    shape = cfg.make_shape()
    shape.check(cfg.domain.h)
    table, rep, runs, distinct = lab.multiplicity_experiment(
        shape, cfg.charge.eps, cfg.charge.sigma, cfg.make_potential(), cfg.domain.h,
        cfg.make_options(), starts=_starts_for(cfg, shape), threads=threads,
        rel_energy=cfg.scan.dedup_rel_energy, bary_factor=cfg.scan.dedup_bary_factor,
    )
    fields = {f"solution_{k}": (s.grid, s.u, {"omega": repr(s.omega), "energy": repr(s.energy)}) for k, s in enumerate(distinct)}
    return table.to_csv(), rep, fields


def _cutoff(cfg: RunConfig, threads: int):
    table, rep = lab.cutoff_convergence(
        cfg.scan.rho_list, cfg.charge.sigma, cfg.make_potential(), cfg.domain.n_per_unit,
        cfg.make_options(), dim=cfg.domain.dim, reference_rho=cfg.scan.reference_rho, threads=threads,
    )
    return table.to_csv(), rep, {}


DISPATCH = {
    "verify-potential": _verify_potential,
    "minimize": _minimize,
    "scan-rho": _scan_rho,
    "check-scaling": _check_scaling,
    "epsilon-bar": _epsilon_bar,
    "localization": _localization,
    "multiplicity": _multiplicity,
    "cutoff": _cutoff,
}


def run(cfg: RunConfig, out_dir: Optional[str] = None, threads: int = 1) -> int:
    out = Path(out_dir or cfg.run.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        print(f"kleinwave: cannot write to {out}: {exc}", file=sys.stderr)
        return 1

    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("kleinwave")
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    t0 = time.perf_counter()
    try:
        log.info("experiment %s, seed %d, threads %d", cfg.run.experiment, cfg.solver.seed, threads)
        log.info("resolved configuration:\n%s", format_config(cfg))
        try:
            text, summary, dumps = DISPATCH[cfg.run.experiment](cfg, threads)
        except Exception as exc:  # operational failure: log and exit nonzero
            log.exception("run failed: %s", exc)
            print(f"kleinwave: {exc}", file=sys.stderr)
            return 1
        (out / "results.csv").write_text(text, newline="")
        summary = {"schema_version": SCHEMA_VERSION, "experiment": cfg.run.experiment, **summary}
        (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
        for name, (grid, u, extra) in dumps.items():
            write_field(out / f"{name}.field", grid, u, extra)
        verdicts = summary.get("verdicts", {})
        for k, v in verdicts.items():
            log.info("verdict %s: %s", k, "pass" if v else "FINDING")
        log.info("wall time %.3f s", time.perf_counter() - t0)
        return 0
    finally:
        root.removeHandler(handler)
        handler.close()


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="kleinwave", description="Standing waves of the nonlinear Klein-Gordon equation.")
    ap.add_argument("config", help="path to the run configuration")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
    ap.add_argument("--out", help="output directory (overrides run.output)")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    if args.threads < 1:
        ap.error("--threads must be >= 1")
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"kleinwave: {exc}", file=sys.stderr)
        return 1
    try:
        cfg = parse_config(text, args.overrides)
    except ConfigError as exc:
        print(f"kleinwave: config error: {exc}", file=sys.stderr)
        return 2
    return run(cfg, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
