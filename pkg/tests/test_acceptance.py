"""Acceptance gate: one test and one printed pass/fail line per criterion."""

import time

import numpy as np
import pytest

from kleinwave.cli import main
from kleinwave.discretization import DomainShape, masked_grid_from_mask
from kleinwave.functional import ChargeSpec, reduced_energy, reduced_gradient
from kleinwave.lemma_lab import (
    antipodal_starts,
    check_scaling,
    cutoff_convergence,
    find_epsilon_bar,
    localization_check,
    multiplicity_experiment,
    scan_rho,
)
from kleinwave.minimizer import SolveOptions, minimize_radial
from kleinwave.potential import Potential, verify_hypotheses

SIGMA = 20.0
POT = Potential()
# level gaps at rho = 12 -> 16 are ~1.4e-6, so the scans run at a tighter stop rule
SCAN_OPTS = SolveOptions(grad_tol=1e-8)


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail, elapsed=None):
        t = "" if elapsed is None else f" [{elapsed:.2f} s]"
        with capsys.disabled():
            print(f"\nACCEPTANCE criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}{t}")
        assert ok, detail

    return emit


@pytest.fixture(scope="module")
def cache():
    return {}


def test_c01_hypotheses(report):
    t0 = time.perf_counter()
    rep = verify_hypotheses(POT, 2)
    dt = time.perf_counter() - t0
    ok = rep.all_ok and rep.w2_witness == 1.0 and rep.np_constants == (1.0, 0.1875, 4.0, 6.0)
    ok = ok and rep.quad_bound[1] == 0.25 and rep.quad_bound[0] > 1.0 and dt < 1.0
    report(1, ok, f"W1 W2 Np subcritical ok={rep.all_ok}, delta={rep.quad_bound[0]:.4f}", dt)


def test_c02_gradient(report):
    t0 = time.perf_counter()
    n, L = 64, 4.0
    h = 2 * L / (n - 1)
    xs = -L + h * np.arange(n)
    X, Y = np.meshgrid(xs, xs)
    R = np.hypot(X, Y)
    grid = masked_grid_from_mask((-L, -L), h, (R > 1.0) & (R < L))
    spec = ChargeSpec(SIGMA, 0.5, 2)
    rng = np.random.default_rng(7)
    u = rng.random(grid.size) * 1.5
    g = reduced_gradient(u, grid, spec, POT)
    worst = 0.0
    for _ in range(20):
        v = rng.standard_normal(grid.size)
        s = 1e-6
        fd = (reduced_energy(u + s * v, grid, spec, POT) - reduced_energy(u - s * v, grid, spec, POT)) / (2 * s)
        an = float(np.dot(grid.weights, g * v))
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-300))
    dt = time.perf_counter() - t0
    report(2, worst <= 1e-5 and dt < 10, f"max relative FD error {worst:.2e} on {grid.shape} lattice", dt)


def test_c03_scaling(report):
    t0 = time.perf_counter()
    _, rep = check_scaling(2, [(0.5, 4.0), (0.25, 2.0)], 8.0, SIGMA, 256, POT)
    dt = time.perf_counter() - t0
    gap = rep["max_relative_gap"]
    report(3, gap <= 1e-10 and rep["verdicts"]["all_converged"] and dt < 60, f"max relative gap {gap:.2e}", dt)


def test_c04_monotonicity(report, cache):
    t0 = time.perf_counter()
    table, rep = scan_rho(2, 1.0, [4.0, 6.0, 8.0, 12.0, 16.0], SIGMA, 32, POT, SCAN_OPTS)
    dt = time.perf_counter() - t0
    cache["levels"] = dict(zip(rep["rho"], rep["levels"]))
    v = rep["verdicts"]
    ok = v["all_converged"] and v["strictly_decreasing"] and v["gaps_exceed_margin"] and dt < 300
    report(4, ok, f"gaps {', '.join(f'{g:.2e}' for g in rep['gaps'])} vs margin {rep['gap_margin']:.0e}", dt)


def test_c05_plateau(report, cache):
    t0 = time.perf_counter()
    m16 = cache.get("levels", {}).get(16.0)
    if m16 is None:
        m16 = minimize_radial(2, 16.0, 1.0, SIGMA, 512, POT, SCAN_OPTS).energy
    table, rep = cutoff_convergence([4.0, 8.0, 12.0, 16.0], SIGMA, POT, 32, SCAN_OPTS, reference_rho=32.0)
    m32 = rep["reference_energy"]
    dt = time.perf_counter() - t0
    plateau = (m16 - m32) / m32
    v = rep["verdicts"]
    ok = 0 <= plateau <= 0.02 and v["above_ball_level"] and v["nonincreasing"] and dt < 300
    report(5, ok, f"(m16 - m32)/m32 = {plateau:.2e}, cutoff rows above level and nonincreasing", dt)


@pytest.fixture(scope="module")
def dumbbell_runs():
    shape = DomainShape("dumbbell", r=0.25, cat_hint=2)
    t0 = time.perf_counter()
    out = multiplicity_experiment(shape, 0.25, SIGMA, POT, 0.0625)
    return shape, 0.25, out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def annulus_runs():
    shape = DomainShape("annulus", r=0.25, rho=1.0, gamma=4.0, cat_hint=2)
    t0 = time.perf_counter()
    out = multiplicity_experiment(shape, 0.25, SIGMA, POT, 0.0625, starts=antipodal_starts(shape, 0.0625))
    return shape, 0.25, out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def ball_runs():
    shape = DomainShape("ball", r=0.2, rho=1.0)
    starts = [(0.3, 0.0), (-0.3, 0.0), (0.0, 0.3), (0.0, -0.3)]
    t0 = time.perf_counter()
    out = multiplicity_experiment(shape, 0.35, SIGMA, POT, 0.0625, starts=starts)
    return shape, 0.35, out, time.perf_counter() - t0


def test_c06_residual(report, dumbbell_runs, annulus_runs, ball_runs):
    worst_res = worst_charge = 0.0
    count = 0
    for _, eps, (_, _, runs, _), _ in (dumbbell_runs, annulus_runs, ball_runs):
        C = ChargeSpec(SIGMA, eps, 2).C
        for run in runs:
            r = run.result
            if r.converged:
                count += 1
                worst_res = max(worst_res, r.residual)
                worst_charge = max(worst_charge, abs(r.charge - C) / C)
    ok = count > 0 and worst_res <= 1e-5 and worst_charge <= 1e-10
    report(6, ok, f"{count} converged runs, max residual {worst_res:.2e}, max charge error {worst_charge:.2e}")


def test_c07_threshold(report, cache):
    t0 = time.perf_counter()
    table, rep = find_epsilon_bar(1.0, 4.0, SIGMA, [0.5, 0.35, 0.25, 0.18], POT, 0.0625)
    dt = time.perf_counter() - t0
    cache["eps_bar"] = rep["eps_bar"]
    dominated = rep["verdicts"]["m_star_dominates_outer_ball"]
    row = next((r for r in rep["rows"] if r["eps"] == rep["eps_bar"]), None)
    ok = row is not None and row["margin"] > row["tolerance"] and dominated and dt < 900
    detail = "no threshold" if row is None else (
        f"eps_bar = {rep['eps_bar']}, margin {row['margin']:.4f} > tol {row['tolerance']:.1e}, m* >= m(eps, 4) on all rows"
    )
    report(7, ok, detail, dt)


def test_c08_localization(report, cache):
    eps = 0.25
    assert eps <= cache.get("eps_bar", eps)
    shape = DomainShape("dumbbell", r=0.25, cat_hint=2)
    t0 = time.perf_counter()
    _, rep, runs = localization_check(shape, eps, SIGMA, POT, 0.0625)
    dt = time.perf_counter() - t0
    ok = rep["qualifying"] > 0 and rep["violations"] == 0 and dt < 900
    report(8, ok, f"{rep['qualifying']} runs below m(eps, r) = {rep['threshold_m_eps_r']:.4f}, {rep['violations']} outside D+", dt)


def _pairs_ok(distinct, r):
    # some symmetric pair: energies within 1e-6 relative and barycenters more than r apart
    for i, a in enumerate(distinct):
        for b in distinct[i + 1:]:
            if abs(a.energy - b.energy) <= 1e-6 * abs(a.energy) and np.linalg.norm(a.barycenter - b.barycenter) > r:
                return True
    return False


def test_c09_multiplicity(report, dumbbell_runs, annulus_runs, ball_runs):
    details, ok = [], True
    total = 0.0
    for name, (shape, _, (_, rep, _, distinct), dt) in (("annulus", annulus_runs), ("dumbbell", dumbbell_runs)):
        good = rep["distinct_count"] >= 2 and _pairs_ok(distinct, shape.r)
        ok &= good
        total += dt
        details.append(f"{name} {rep['distinct_count']} distinct")
    shape, _, (_, rep, _, _), dt = ball_runs
    total += dt
    ok &= rep["distinct_count"] == 1
    details.append(f"ball {rep['distinct_count']} class")
    report(9, ok and total < 1200, ", ".join(details), total)


def test_c10_reproducible(report, tmp_path):
    cfg = tmp_path / "rep.cfg"
    cfg.write_text(
        "experiment = multiplicity\n[charge]\neps = 0.25\n[domain]\nshape = annulus\nrho = 1\ngamma = 3\n"
        "r = 0.25\ncat_hint = 2\nh = 0.125\n[scan]\nstarts = antipodal\n"
    )
    codes = [main([str(cfg), "--out", str(tmp_path / d), "--threads", "2"]) for d in ("a", "b")]
    same = (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()
    report(10, codes == [0, 0] and same, "results.csv byte-identical across two runs (threads = 2)")
