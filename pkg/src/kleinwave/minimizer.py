"""Constrained minimization of the reduced functional.

The charge constraint is eliminated exactly (omega = C / int u^2), so every
solver here is an unconstrained descent on nodal values.  Line searches use
Armijo backtracking on the exact energy *increment* J(u + a d) - J(u), which
is evaluated in closed form to avoid cancellation near convergence.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy import ndimage

from . import functional as F
from .discretization import (
    DomainShape,
    GridError,
    MaskedGrid,
    RadialGrid,
    build_radial_grid,
    erode,
    point_in_mask,
)
from .potential import Potential

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolveOptions:
    max_iters: int = 20000
    grad_tol: float = 1e-6
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    step0: float = 1.0
    penalty_weight: float = 0.0
    penalty_growth: float = 10.0
    seed: int = 0
    method: str = "lbfgs"
    memory: int = 10

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack must lie in (0, 1)")
        if not self.step0 > 0:
            raise ValueError("step0 must be positive")
        if self.penalty_weight < 0:
            raise ValueError("penalty_weight must be >= 0")
        if not self.penalty_growth > 1:
            raise ValueError("penalty_growth must exceed 1")
        if self.method not in ("lbfgs", "steepest"):
            raise ValueError(f"unknown descent method {self.method!r}")
        if self.memory < 1:
            raise ValueError("memory must be >= 1")


@dataclass
class SolveResult:
    state: F.FieldState
    energy: float
    residual: float
    grad_norm: float
    barycenter: np.ndarray
    iters: int
    converged: bool
    history: list
    grid: object = field(repr=False, default=None)
    message: str = ""
    penalty_escalations: int = 0
    penalty_weight: float = 0.0
    charge: float = float("nan")

    @property
    def u(self) -> np.ndarray:
        return self.state.u

    @property
    def omega(self) -> float:
        return self.state.omega

    def to_dict(self) -> dict:
        return {
            "energy": self.energy,
            "omega": self.omega,
            "charge": self.charge,
            "residual": self.residual,
            "grad_norm": self.grad_norm,
            "barycenter": [float(b) for b in self.barycenter],
            "iters": self.iters,
            "converged": self.converged,
            "message": self.message,
            "penalty_escalations": self.penalty_escalations,
        }


class ReducedObjective:
    """J(u) plus an optional barycenter penalty lam |beta(u) - target|^2."""

    def __init__(self, grid, spec: F.ChargeSpec, pot: Potential, lam: float = 0.0, target=None):
        self.grid = grid
        self.spec = spec
        self.pot = pot
        self.lam = float(lam)
        self.target = None if target is None else np.asarray(target, dtype=float)
        self.w = grid.weights
        self.K = grid.stiffness

    @property
    def penalized(self) -> bool:
        return self.lam > 0 and self.target is not None

    def value(self, u) -> float:
        j = F.reduced_energy(u, self.grid, self.spec, self.pot)
        if self.penalized:
            b = F.barycenter(u, self.grid)
            j += self.lam * float(np.sum((b - self.target) ** 2))
        return j

    def gradient(self, u) -> np.ndarray:
        g = F.reduced_gradient(u, self.grid, self.spec, self.pot)
        if self.penalized:
            b, jac = F.barycenter_gradient(u, self.grid)
            g = g + 2.0 * self.lam * ((b - self.target) @ jac) / self.w
        return g

    def increment(self, u, d, alpha) -> float:
        """J(u + alpha d) - J(u), free of cancellation."""
        w, eps2, C = self.w, self.spec.eps**2, self.spec.C
        Ku, Kd = self.K @ u, self.K @ d
        dgrad = 0.5 * eps2 * alpha * (2.0 * np.dot(u, Kd) + alpha * np.dot(d, Kd))
        dpot = np.dot(w, self.pot.W_increment(u, alpha * d))
        s0 = np.dot(w, u * u)
        ds = alpha * (2.0 * np.dot(w, u * d) + alpha * np.dot(w, d * d))
        if s0 + ds <= F.TOL_ZERO:
            return math.inf
        dcharge = -0.5 * C * C * ds / (s0 * (s0 + ds))
        out = dgrad + dpot + dcharge
        if self.penalized:
            out += self._penalty_increment(u, d, alpha)
        return float(out)

    def _penalty_increment(self, u, d, alpha):
        g = self.grid
        du, dd = g.incidence @ u, g.incidence @ d
        k, mid = g.kappa, g.edge_midpoints
        G0 = np.dot(k, du * du)
        dG = alpha * (2.0 * np.dot(k, du * dd) + alpha * np.dot(k, dd * dd))
        M0 = mid.T @ (k * du * du)
        dM = alpha * (2.0 * (mid.T @ (k * du * dd)) + alpha * (mid.T @ (k * dd * dd)))
        G1 = G0 + dG
        if G1 <= F.TOL_ZERO:
            return math.inf
        b0 = M0 / G0
        db = (dM * G0 - M0 * dG) / (G0 * G1)
        return self.lam * float(np.dot(db, db + 2.0 * (b0 - self.target)))


def _lbfgs_direction(g, S, Y, w):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(list(zip(S, Y, (1.0 / np.dot(w, y * s) for s, y in zip(S, Y))))):
        a = rho * np.dot(w, s * q)
        alphas.append((a, rho, s, y))
        q -= a * y
    s, y = S[-1], Y[-1]
    q *= np.dot(w, s * y) / np.dot(w, y * y)
    for a, rho, s, y in reversed(alphas):
        b = rho * np.dot(w, y * q)
        q += (a - b) * s
    return -q


def descend(obj: ReducedObjective, u0: np.ndarray, opts: SolveOptions):
    """Armijo line-search descent; returns (u, history, converged, iters, message, grad_norm).

    history rows are (energy, weighted gradient norm) before each step; the
    energy is tracked by accumulating exact increments and is therefore
    strictly decreasing across accepted steps.
    """
    w = obj.w
    u = np.array(u0, dtype=float)
    J = obj.value(u)
    g = obj.gradient(u)
    gnorm = float(np.sqrt(np.dot(w, g * g)))
    history = [(J, gnorm)]
    S: list = []
    Y: list = []
    alpha_prev = opts.step0
    message = "max_iters reached"
    converged = False
    it = 0
    while True:
        if gnorm <= opts.grad_tol:
            converged = True
            message = "gradient tolerance reached"
            break
        if it >= opts.max_iters:
            break
        if opts.method == "lbfgs" and S:
            d = _lbfgs_direction(g, S, Y, w)
            slope = float(np.dot(w, g * d))
            if not slope < 0:
                S.clear()
                Y.clear()
                d, slope = -g, -gnorm * gnorm
            alpha = opts.step0
        else:
            d, slope = -g, -gnorm * gnorm
            alpha = opts.step0 if (opts.method == "lbfgs" or it == 0) else alpha_prev / opts.backtrack
            if opts.method == "lbfgs":
                # first quasi-Newton step: unit-length trial in the weighted norm
                alpha = min(opts.step0, 1.0 / max(gnorm, 1e-300))
        dJ = obj.increment(u, d, alpha)
        while not (dJ < 0 and dJ <= opts.armijo_c * alpha * slope):
            alpha *= opts.backtrack
            if alpha < 1e-18:
                break
            dJ = obj.increment(u, d, alpha)
        if not (dJ < 0 and dJ <= opts.armijo_c * alpha * slope):
            message = "line search failed: no decrease at machine-precision step"
            break
        u_new = u + alpha * d
        g_new = obj.gradient(u_new)
        if opts.method == "lbfgs":
            s, y = u_new - u, g_new - g
            if np.dot(w, s * y) > 1e-16 * np.sqrt(np.dot(w, s * s) * np.dot(w, y * y)):
                S.append(s)
                Y.append(y)
                if len(S) > opts.memory:
                    S.pop(0)
                    Y.pop(0)
        u, g, J = u_new, g_new, J + dJ
        gnorm = float(np.sqrt(np.dot(w, g * g)))
        alpha_prev = alpha
        it += 1
        history.append((J, gnorm))
    return u, history, converged, it, message, gnorm


def _finish(obj: ReducedObjective, u, history, converged, iters, message, gnorm) -> SolveResult:
    grid, spec, pot = obj.grid, obj.spec, obj.pot
    omega = F.omega_from_u(u, grid, spec.C)
    try:
        beta = F.barycenter(u, grid)
    except F.DegenerateFieldError:
        beta = np.full(2 if isinstance(grid, MaskedGrid) else grid.dim, np.nan)
    return SolveResult(
        state=F.FieldState(u, omega),
        energy=F.reduced_energy(u, grid, spec, pot),
        residual=F.pde_residual(u, omega, spec.eps, grid, pot),
        grad_norm=gnorm,
        barycenter=beta,
        iters=iters,
        converged=converged,
        history=history,
        grid=grid,
        message=message,
        penalty_weight=obj.lam,
        charge=F.charge(u, omega, grid),
    )


def minimize_reduced(init, grid, spec: F.ChargeSpec, pot: Potential, opts: SolveOptions = SolveOptions()) -> SolveResult:
    init = np.asarray(init, dtype=float)
    if init.shape != (grid.size,):
        raise GridError(f"init has shape {init.shape}, grid has {grid.size} unknowns")
    if F.l2sq(init, grid) <= F.TOL_ZERO:
        raise F.DegenerateFieldError("initial field vanishes")
    obj = ReducedObjective(grid, spec, pot)
    return _finish(obj, *descend(obj, init, opts))


def default_radial_init(grid: RadialGrid, C: float) -> np.ndarray:
    """A max(0, 1 - (r/(rho/2))^2)^2 scaled so that int u0^2 = C."""
    prof = np.maximum(0.0, 1.0 - (grid.r / (0.5 * grid.rho)) ** 2) ** 2
    return prof * math.sqrt(C / F.l2sq(prof, grid))


def minimize_radial(dim, rho, eps, sigma, n, pot: Potential, opts: SolveOptions = SolveOptions(), init=None) -> SolveResult:
    grid = build_radial_grid(dim, rho, n)
    spec = F.ChargeSpec(sigma, eps, dim)
    u0 = default_radial_init(grid, spec.C) if init is None else init
    return minimize_reduced(u0, grid, spec, pot, opts)


def symmetric_init(grid: MaskedGrid, C: float) -> np.ndarray:
    """Distance-to-boundary bump; inherits every lattice symmetry of the mask."""
    dist = ndimage.distance_transform_edt(np.pad(grid.inside, 1))[1:-1, 1:-1]
    u = dist[grid.inside] * grid.h
    return u * math.sqrt(C / F.l2sq(u, grid))


def minimize_with_barycenter(
    grid: MaskedGrid,
    spec: F.ChargeSpec,
    pot: Potential,
    target,
    opts: SolveOptions = SolveOptions(),
    init=None,
    max_escalations: int = 10,
) -> SolveResult:
    """Penalty method for min J(u) subject to beta(u) = target.

    The weight starts at ``opts.penalty_weight`` (1 on the first escalation when
    that is 0) and is multiplied by ``opts.penalty_growth`` whenever an inner
    solve ends with the barycenter more than h from the target.  The reported
    energy excludes the penalty term.
    """
    target = np.asarray(target, dtype=float)
    u = symmetric_init(grid, spec.C) if init is None else np.asarray(init, dtype=float)
    lam = opts.penalty_weight
    escalations = 0
    while True:
        obj = ReducedObjective(grid, spec, pot, lam, target)
        u, history, conv, iters, msg, gnorm = descend(obj, u, opts)
        dist = float(np.linalg.norm(F.barycenter(u, grid) - target))
        if dist <= grid.h:
            break
        if escalations >= max_escalations:
            conv = False
            msg = f"barycenter still {dist:.3g} from target after {escalations} escalations"
            break
        lam = 1.0 if lam == 0 else lam * opts.penalty_growth
        escalations += 1
        log.debug("barycenter off by %.3g; penalty -> %g", dist, lam)
    res = _finish(obj, u, history, conv, iters, msg, gnorm)
    res.penalty_escalations = escalations
    return res


def phi_epsilon(y, profile: SolveResult, grid: MaskedGrid, dminus: Optional[MaskedGrid] = None) -> np.ndarray:
    """Place the radial profile at y: u(x) = u_eps(|x - y|), zero beyond the profile ball."""
    if dminus is not None and not point_in_mask(dminus, y):
        raise GridError(f"start point {tuple(y)} lies outside D^-")
    pg = profile.grid
    rr = np.concatenate([[0.0], pg.r, [pg.rho]])
    uu = np.concatenate([[profile.u[0]], profile.u, [0.0]])
    dist = np.hypot(*(grid.points - np.asarray(y, dtype=float)).T)
    return np.interp(dist, rr, uu, right=0.0)


def cutoff_rescale(profile: SolveResult, rho: float):
    """Cutoff chi_rho * u_bar (1 on [0, rho/2], linear to 0 at rho) rescaled onto the charge.

    Returns ``(u_rho, grid_rho, t_rho)`` where grid_rho is the ball of radius
    rho with the profile's node spacing and omega_bar * int (t w)^2 equals
    the profile's charge.
    """
    pg = profile.grid
    n = int(round(rho / pg.h))
    if not math.isclose(n * pg.h, rho, rel_tol=1e-12):
        raise GridError(f"rho = {rho} is not a multiple of the profile spacing {pg.h}")
    grid = build_radial_grid(pg.dim, rho, n)
    ubar = np.zeros(grid.size)
    k = min(grid.size, pg.size)
    ubar[:k] = profile.u[:k]
    chi = np.clip(2.0 - 2.0 * grid.r / rho, 0.0, 1.0)
    w = chi * ubar
    s = F.l2sq(w, grid)
    if s <= F.TOL_ZERO:
        raise F.DegenerateFieldError("cutoff removed the whole profile")
    t = math.sqrt(profile.charge / (profile.omega * s))
    return t * w, grid, t


# --------------------------------------------------------------------------
# multistart


@dataclass
class MultistartRun:
    start: tuple
    result: SolveResult


def same_solution(a: SolveResult, b: SolveResult, h: float, rel_energy: float = 1e-6, bary_factor: float = 2.0) -> bool:
    emax = max(abs(a.energy), abs(b.energy))
    return abs(a.energy - b.energy) <= rel_energy * emax and float(
        np.linalg.norm(a.barycenter - b.barycenter)
    ) <= bary_factor * h


def deduplicate(results: Sequence[SolveResult], h: float, rel_energy: float = 1e-6, bary_factor: float = 2.0) -> List[SolveResult]:
    """Distinct converged solutions sorted by energy (first representative kept)."""
    distinct: List[SolveResult] = []
    for res in sorted((r for r in results if r.converged), key=lambda r: r.energy):
        if not any(same_solution(res, d, h, rel_energy, bary_factor) for d in distinct):
            distinct.append(res)
    return distinct


def profile_for_domain(shape: DomainShape, spec: F.ChargeSpec, pot: Potential, h: float, opts: SolveOptions) -> SolveResult:
    """Radial minimizer on B_{2r} with node spacing at most h/2."""
    n = max(32, int(math.ceil(2.0 * shape.r / h)) * 2)
    return minimize_radial(2, 2.0 * shape.r, spec.eps, spec.sigma, n, pot, opts)


def multistart(
    shape: DomainShape,
    spec: F.ChargeSpec,
    pot: Potential,
    opts: SolveOptions,
    starts: Sequence,
    h: float,
    profile: Optional[SolveResult] = None,
    threads: int = 1,
    rel_energy: float = 1e-6,
    bary_factor: float = 2.0,
):
    """Solve from phi_epsilon(y) for each start; returns (runs, distinct, grid).

    Non-converged runs stay in ``runs``; ``distinct`` holds the deduplicated
    converged solutions sorted by energy.
    """
    if len(starts) == 0:
        raise ValueError("multistart needs at least one start point")
    grid = shape.grid(h)
    dminus = erode(shape, 2.0 * shape.r, h)
    if profile is None:
        profile = profile_for_domain(shape, spec, pot, h, opts)
    inits = [phi_epsilon(y, profile, grid, dminus) for y in starts]

    def solve(u0):
        return minimize_reduced(u0, grid, spec, pot, opts)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(solve, inits))
    else:
        results = [solve(u0) for u0 in inits]
    runs = [MultistartRun(tuple(map(float, y)), r) for y, r in zip(starts, results)]
    return runs, deduplicate(results, h, rel_energy, bary_factor), grid
