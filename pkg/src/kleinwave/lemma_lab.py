"""Batch experiments producing level tables and verdicts for the energy-level relations.

Every experiment returns a :class:`LevelTable` (one row per parameter tuple)
plus a plain ``dict`` report whose ``verdicts`` entry maps a check name to a
boolean.  Violations are findings, not exceptions.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence

import numpy as np

from . import functional as F
from .discretization import (
    DomainShape,
    build_radial_grid,
    default_starts,
    dilate,
    distance_to_mask,
)
from .minimizer import (
    SolveOptions,
    SolveResult,
    cutoff_rescale,
    default_radial_init,
    minimize_radial,
    minimize_reduced,
    minimize_with_barycenter,
    multistart,
    phi_epsilon,
    profile_for_domain,
)
from .potential import Potential

LEVEL_COLUMNS = ["eps", "rho", "gamma", "level", "kind", "n", "converged", "residual", "grad_norm", "iters"]


def _pmap(fn: Callable, items: Sequence, threads: int = 1) -> list:
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


@dataclass
class LevelTable:
    rows: List[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    columns: List[str] = field(default_factory=lambda: list(LEVEL_COLUMNS))

    def key(self, row) -> tuple:
        return (row.get("kind"), row.get("eps"), row.get("rho"), row.get("gamma"), row.get("n"))

    def add(self, **row) -> None:
        k = self.key(row)
        if any(self.key(r) == k for r in self.rows):
            raise ValueError(f"duplicate level-table row {k}")
        self.rows.append(row)

    def column(self, name: str, kind: Optional[str] = None) -> list:
        return [r[name] for r in self.rows if kind is None or r.get("kind") == kind]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.columns, extrasaction="ignore", lineterminator="\r\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: _fmt(row.get(k)) for k in self.columns})
        return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list, np.ndarray)):
        return " ".join(_fmt(float(x)) for x in v)
    return str(v)


def _level_row(res: SolveResult, eps, rho, n, kind="m", gamma=None) -> dict:
    return dict(
        eps=float(eps),
        rho=float(rho),
        gamma=None if gamma is None else float(gamma),
        level=res.energy,
        kind=kind,
        n=int(n),
        converged=res.converged,
        residual=res.residual,
        grad_norm=res.grad_norm,
        iters=res.iters,
    )


def energy_tolerance(res: SolveResult) -> float:
    """First-order bound 2 |g| |u| on the energy error of a stopped descent."""
    return 2.0 * res.grad_norm * F.weighted_norm(res.u, res.grid)


def certify_radial_level(
    dim, rho, eps, sigma, n, pot: Potential, opts: SolveOptions, reference: float, starts: int = 3, rel: float = 1e-6
) -> bool:
    """Re-solve from randomized bump inits; True when every start reproduces ``reference``."""
    rng = np.random.default_rng(opts.seed)
    grid = build_radial_grid(dim, rho, n)
    C = sigma * eps**dim
    for _ in range(starts):
        width = rng.uniform(0.25, 0.75) * rho
        centre = rng.uniform(0.0, 0.25) * rho
        prof = np.exp(-(((grid.r - centre) / width) ** 2)) * (1.0 + 0.1 * rng.standard_normal(grid.size) ** 2)
        prof *= math.sqrt(C / F.l2sq(prof, grid))
        res = minimize_radial(dim, rho, eps, sigma, n, pot, opts, init=prof)
        if not res.converged or abs(res.energy - reference) > rel * abs(reference):
            return False
    return True


# --------------------------------------------------------------------------
# monotonicity in rho and the large-ball limit


def scan_rho(
    dim: int,
    eps: float,
    rho_list: Sequence[float],
    sigma: float,
    n_per_unit: int,
    pot: Potential,
    opts: SolveOptions = SolveOptions(),
    threads: int = 1,
    certify: bool = False,
):
    rho_list = [float(r) for r in rho_list]
    if len(rho_list) < 2:
        raise ValueError("rho_list needs at least two radii")
    if any(b <= a for a, b in zip(rho_list, rho_list[1:])):
        raise ValueError("rho_list must be strictly increasing")
    ns = [int(round(n_per_unit * rho)) for rho in rho_list]

    def solve(k):
        return minimize_radial(dim, rho_list[k], eps, sigma, ns[k], pot, opts)

    results = _pmap(solve, list(range(len(rho_list))), threads)
    table = LevelTable(metadata=dict(potential=pot.to_dict(), sigma=sigma, dim=dim, eps=eps, n_per_unit=n_per_unit))
    if certify:
        table.columns.append("certified")
    for rho, n, res in zip(rho_list, ns, results):
        row = _level_row(res, eps, rho, n)
        if certify:
            row["certified"] = certify_radial_level(dim, rho, eps, sigma, n, pot, opts, res.energy)
        table.add(**row)

    levels = [r.energy for r in results]
    gaps = [a - b for a, b in zip(levels, levels[1:])]
    margin = 10.0 * opts.grad_tol
    violations = [(rho_list[k], rho_list[k + 1]) for k, g in enumerate(gaps) if not g > 0]
    plateau = gaps[-1] / levels[-1]
    report = {
        "experiment": "scan-rho",
        "rho": rho_list,
        "levels": levels,
        "gaps": gaps,
        "gap_margin": margin,
        "violations": violations,
        "plateau_increment": gaps[-1],
        "plateau_relative": plateau,
        "verdicts": {
            "all_converged": all(r.converged for r in results),
            "strictly_decreasing": not violations,
            "gaps_exceed_margin": all(g > margin for g in gaps),
        },
    }
    if certify:
        report["verdicts"]["certified"] = all(r["certified"] for r in table.rows)
    return table, report


def check_scaling(
    dim: int,
    eps_pairs: Sequence,
    rho: float,
    sigma: float,
    n: int,
    pot: Potential,
    opts: SolveOptions = SolveOptions(),
    threads: int = 1,
):
    """Compare m(eps, rho_eps) with eps^N m(1, rho) for each (eps, rho_eps) with rho_eps / eps = rho."""
    pairs = [(float(e), float(r)) for e, r in eps_pairs]
    for e, r in pairs:
        if not math.isclose(r / e, rho, rel_tol=1e-12):
            raise ValueError(f"node mismatch: ball radius {r} at eps={e} does not rescale to {rho}")
    ref = minimize_radial(dim, rho, 1.0, sigma, n, pot, opts)
    results = _pmap(lambda p: minimize_radial(dim, p[1], p[0], sigma, n, pot, opts), pairs, threads)
    table = LevelTable(metadata=dict(potential=pot.to_dict(), sigma=sigma, dim=dim, n=n, reference_rho=rho))
    table.columns += ["scaled_reference", "relative_gap"]
    table.add(**_level_row(ref, 1.0, rho, n), scaled_reference=ref.energy, relative_gap=0.0)
    gaps = []
    for (e, r), res in zip(pairs, results):
        scaled = e**dim * ref.energy
        gap = abs(res.energy - scaled) / abs(scaled)
        gaps.append(gap)
        row = _level_row(res, e, r, n)
        if table.key(row) != table.key(table.rows[0]):
            table.add(**row, scaled_reference=scaled, relative_gap=gap)
    return table, {
        "experiment": "check-scaling",
        "pairs": pairs,
        "relative_gaps": gaps,
        "max_relative_gap": max(gaps) if gaps else 0.0,
        "verdicts": {
            "all_converged": ref.converged and all(r.converged for r in results),
            "scaling_identity": all(g <= 1e-10 for g in gaps),
        },
    }


# --------------------------------------------------------------------------
# threshold epsilon for m(eps, rho) < m*(eps, rho, gamma)


def annulus_star_level(
    rho: float,
    gamma: float,
    spec: F.ChargeSpec,
    pot: Potential,
    h: float,
    opts: SolveOptions,
    profile: Optional[SolveResult] = None,
):
    """m*(eps, rho, gamma): best of a ring-symmetric start and an antipodal two-bump start.

    Both starts have barycenter exactly at the centre; the penalty keeps it
    there.  Returns (best result, all results, grid).
    """
    shape = DomainShape("annulus", r=rho / 4.0, rho=rho, gamma=gamma)
    grid = shape.grid(h)
    if profile is None:
        n = max(32, int(math.ceil(rho / h)) * 2)
        profile = minimize_radial(2, rho, spec.eps, spec.sigma, n, pot, opts)
    mid = 0.5 * (1.0 + gamma) * rho
    two = phi_epsilon((mid, 0.0), profile, grid) + phi_epsilon((-mid, 0.0), profile, grid)
    runs = [
        minimize_with_barycenter(grid, spec, pot, (0.0, 0.0), opts),
        minimize_with_barycenter(grid, spec, pot, (0.0, 0.0), opts, init=two),
    ]
    ok = [r for r in runs if r.converged] or runs
    return min(ok, key=lambda r: r.energy), runs, grid


def find_epsilon_bar(
    rho: float,
    gamma: float,
    sigma: float,
    eps_grid: Sequence[float],
    pot: Potential,
    h: float,
    opts: SolveOptions = SolveOptions(),
    radial_n_per_unit: Optional[int] = None,
    threads: int = 1,
):
    """Largest grid eps at and below which m(eps, rho) < m*(eps, rho, gamma) with margin."""
    eps_grid = [float(e) for e in eps_grid]
    if not eps_grid:
        raise ValueError("eps_grid is empty")
    if any(b >= a for a, b in zip(eps_grid, eps_grid[1:])):
        raise ValueError("eps_grid must be strictly decreasing")
    npu = radial_n_per_unit or int(math.ceil(4.0 / h))

    def row_for(eps):
        spec = F.ChargeSpec(sigma, eps, 2)
        m_in = minimize_radial(2, rho, eps, sigma, max(32, int(round(npu * rho))), pot, opts)
        m_out = minimize_radial(2, gamma * rho, eps, sigma, max(32, int(round(npu * gamma * rho))), pot, opts)
        star, _, _ = annulus_star_level(rho, gamma, spec, pot, h, opts, profile=m_in)
        return m_in, m_out, star

    triples = _pmap(row_for, eps_grid, threads)
    table = LevelTable(metadata=dict(potential=pot.to_dict(), sigma=sigma, dim=2, rho=rho, gamma=gamma, h=h))
    table.columns += ["margin", "tolerance", "holds"]
    rows = []
    for eps, (m_in, m_out, star) in zip(eps_grid, triples):
        tol = energy_tolerance(m_in) + energy_tolerance(star)
        margin = star.energy - m_in.energy
        holds = bool(m_in.converged and star.converged and margin > tol)
        table.add(**_level_row(m_in, eps, rho, m_in.grid.n), margin=margin, tolerance=tol, holds=holds)
        table.add(**_level_row(m_out, eps, gamma * rho, m_out.grid.n))
        table.add(**_level_row(star, eps, rho, star.grid.size, kind="m_star", gamma=gamma))
        rows.append(dict(eps=eps, m=m_in.energy, m_outer=m_out.energy, m_star=star.energy, margin=margin, tolerance=tol, holds=holds))
    # eps_bar: largest eps such that the inequality holds there and at every smaller grid value
    eps_bar = None
    for row in reversed(rows):
        if not row["holds"]:
            break
        eps_bar = row["eps"]
    dominance = all(r["m_star"] >= r["m_outer"] for r in rows)
    return table, {
        "experiment": "epsilon-bar",
        "rho": rho,
        "gamma": gamma,
        "eps_bar": eps_bar,
        "rows": rows,
        "verdicts": {
            "threshold_found": eps_bar is not None,
            "holds_at_smallest_eps": rows[-1]["holds"],
            "m_star_dominates_outer_ball": dominance,
        },
    }


# --------------------------------------------------------------------------
# localization and multiplicity on planar domains


def in_dplus(shape: DomainShape, point, h: float) -> bool:
    """Barycenter test against D^+ = dilate(D, r), Euclidean tolerance h."""
    if shape.kind in ("ball", "annulus", "rectangle"):
        sd = float(shape.signed_distance(np.array([point[0]]), np.array([point[1]]))[0])
        return sd <= shape.r + h
    return distance_to_mask(dilate(shape, shape.r, h), point) <= h


def _thin(points: list, n: Optional[int]) -> list:
    if n is None or n >= len(points):
        return points
    idx = np.unique(np.linspace(0, len(points) - 1, n).round().astype(int))
    return [points[i] for i in idx]


def _run_rows(runs, C: float) -> List[dict]:
    rows = []
    for run in runs:
        r = run.result
        row = dict(
            start_x=run.start[0],
            start_y=run.start[1],
            converged=r.converged,
            energy=r.energy,
            residual=r.residual,
            charge_error=abs(r.charge - C) / C,
            bary_x=float(r.barycenter[0]),
            bary_y=float(r.barycenter[1]),
            iters=r.iters,
        )
        rows.append(row)
    return rows


RUN_COLUMNS = ["start_x", "start_y", "converged", "energy", "residual", "charge_error", "bary_x", "bary_y", "iters"]


def localization_check(
    shape: DomainShape,
    eps: float,
    sigma: float,
    pot: Potential,
    h: float,
    opts: SolveOptions = SolveOptions(),
    starts: Optional[list] = None,
    n_starts: Optional[int] = None,
    threads: int = 1,
    threshold: Optional[float] = None,
):
    """Every converged state below m(eps, r) must have its barycenter in D^+."""
    spec = F.ChargeSpec(sigma, eps, 2)
    n_r = max(32, int(math.ceil(shape.r / h)) * 4)
    m_r = minimize_radial(2, shape.r, eps, sigma, n_r, pot, opts)
    level = m_r.energy if threshold is None else threshold
    if starts is None:
        starts = _thin(default_starts(shape, h), n_starts)
    runs, distinct, grid = multistart(shape, spec, pot, opts, starts, h, threads=threads)
    table = LevelTable(columns=RUN_COLUMNS + ["below_threshold", "in_dplus"], metadata=dict(sigma=sigma, eps=eps, shape=shape.kind))
    qualifying = violations = 0
    for run, row in zip(runs, _run_rows(runs, spec.C)):
        below = bool(run.result.converged and run.result.energy < level)
        inside = bool(in_dplus(shape, run.result.barycenter, h))
        row.update(below_threshold=below, in_dplus=inside)
        table.rows.append(row)
        qualifying += below
        violations += below and not inside
    return table, {
        "experiment": "localization",
        "shape": shape.kind,
        "eps": eps,
        "threshold_m_eps_r": level,
        "runs": len(runs),
        "converged": sum(r.result.converged for r in runs),
        "qualifying": qualifying,
        "violations": violations,
        "note": "no qualifying states" if qualifying == 0 else "",
        "verdicts": {"localized": violations == 0},
    }, runs


def antipodal_starts(shape: DomainShape, h: float, extra: int = 6) -> list:
    """A point of D^- and its mirror image, followed by ``extra`` lattice starts."""
    lattice = default_starts(shape, h)
    pts = np.array(lattice)
    c = np.asarray(shape.center, dtype=float)
    k = int(np.argmax(pts[:, 0] - c[0]))
    p = pts[k]
    mirror = tuple(map(float, 2 * c - p))
    out = [tuple(map(float, p)), mirror]
    return out + [s for s in _thin(lattice, extra) if s not in out]


def multiplicity_experiment(
    shape: DomainShape,
    eps: float,
    sigma: float,
    pot: Potential,
    h: float,
    opts: SolveOptions = SolveOptions(),
    starts: Optional[list] = None,
    threads: int = 1,
    rel_energy: float = 1e-6,
    bary_factor: float = 2.0,
):
    spec = F.ChargeSpec(sigma, eps, 2)
    if starts is None:
        starts = default_starts(shape, h)
    runs, distinct, grid = multistart(
        shape, spec, pot, opts, starts, h, threads=threads, rel_energy=rel_energy, bary_factor=bary_factor
    )
    table = LevelTable(columns=RUN_COLUMNS, metadata=dict(sigma=sigma, eps=eps, shape=shape.kind))
    table.rows.extend(_run_rows(runs, spec.C))
    bary = np.array([d.barycenter for d in distinct]) if distinct else np.zeros((0, 2))
    max_sep = 0.0
    if len(bary) > 1:
        diff = bary[:, None, :] - bary[None, :, :]
        max_sep = float(np.sqrt((diff**2).sum(-1)).max())
    return table, {
        "experiment": "multiplicity",
        "shape": shape.kind,
        "eps": eps,
        "cat_hint": shape.cat_hint,
        "distinct_count": len(distinct),
        "energies": [d.energy for d in distinct],
        "barycenters": [[float(b) for b in d.barycenter] for d in distinct],
        "max_barycenter_separation": max_sep,
        "non_converged": sum(not r.result.converged for r in runs),
        "verdicts": {"count_meets_cat": len(distinct) >= shape.cat_hint},
    }, runs, distinct


# --------------------------------------------------------------------------
# cutoff construction toward the whole-space level


def cutoff_convergence(
    rho_list: Sequence[float],
    sigma: float,
    pot: Potential,
    n_per_unit: int,
    opts: SolveOptions = SolveOptions(),
    dim: int = 2,
    reference_rho: Optional[float] = None,
    threads: int = 1,
):
    rho_list = [float(r) for r in rho_list]
    if len(rho_list) < 1:
        raise ValueError("rho_list is empty")
    ref_rho = reference_rho or 2.0 * max(rho_list)
    if ref_rho < 2.0 * max(rho_list):
        raise ValueError("reference ball must have radius >= 2 max(rho)")
    ref = minimize_radial(dim, ref_rho, 1.0, sigma, int(round(n_per_unit * ref_rho)), pot, opts)
    levels = _pmap(lambda rho: minimize_radial(dim, rho, 1.0, sigma, int(round(n_per_unit * rho)), pot, opts), rho_list, threads)
    table = LevelTable(metadata=dict(potential=pot.to_dict(), sigma=sigma, dim=dim, reference_rho=ref_rho, reference_energy=ref.energy))
    table.columns = ["rho", "t_rho", "cutoff_energy", "level", "reference_energy", "converged"]
    energies = []
    for rho, m in zip(rho_list, levels):
        u, grid, t = cutoff_rescale(ref, rho)
        e = F.energy(u, ref.omega, 1.0, grid, pot)
        energies.append(e)
        table.rows.append(dict(rho=rho, t_rho=t, cutoff_energy=e, level=m.energy, reference_energy=ref.energy, converged=m.converged))
    nonincreasing = all(b <= a for a, b in zip(energies, energies[1:]))
    above_level = all(r["cutoff_energy"] >= r["level"] for r in table.rows)
    above_ref = all(e >= ref.energy for e in energies)
    tail = (energies[-1] - ref.energy) / ref.energy
    return table, {
        "experiment": "cutoff",
        "reference_rho": ref_rho,
        "reference_energy": ref.energy,
        "cutoff_energies": energies,
        "t_rho": [r["t_rho"] for r in table.rows],
        "tail_relative": tail,
        "verdicts": {
            "nonincreasing": nonincreasing,
            "above_ball_level": above_level,
            "above_reference": above_ref,
            "tail_within_2pct": tail <= 0.02,
        },
    }
