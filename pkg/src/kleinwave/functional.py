"""Energy, charge, constraint-reduced functional, barycenter and PDE residual.

For a field u on a grid and a charge C, the frequency is eliminated by
omega = C / int u^2 and the reduced functional is

    J(u) = int eps^2 |grad u|^2 / 2 + W(u) dx + C^2 / (2 int u^2).

Gradients are nodal vectors ``g`` normalised by the quadrature weights, so
that ``sum(w * g * v)`` is the directional derivative of J along v.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discretization import MaskedGrid, RadialGrid, integrate
from .potential import Potential

TOL_ZERO = 1e-14


class DegenerateFieldError(ValueError):
    """Raised when int u^2 or int |grad u|^2 vanishes."""


@dataclass(frozen=True)
class ChargeSpec:
    sigma: float
    eps: float
    dim: int = 2

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")

    @property
    def C(self) -> float:
        return self.sigma * self.eps**self.dim


@dataclass(frozen=True)
class FieldState:
    u: np.ndarray
    omega: float


def l2sq(u, grid) -> float:
    return integrate(grid, np.square(u))


def grad_sq(u, grid) -> float:
    """int |grad u|^2 as a sum of squared edge differences."""
    d = grid.incidence @ u
    return float(np.dot(grid.kappa, d * d))


def charge(u, omega: float, grid) -> float:
    return omega * l2sq(u, grid)


def omega_from_u(u, grid, C: float) -> float:
    s = l2sq(u, grid)
    if s <= TOL_ZERO:
        raise DegenerateFieldError(f"int u^2 = {s:.3e} is below {TOL_ZERO}")
    return C / s


def energy(u, omega: float, eps: float, grid, pot: Potential) -> float:
    return (
        0.5 * eps * eps * grad_sq(u, grid)
        + integrate(grid, pot.W(u))
        + 0.5 * omega * omega * l2sq(u, grid)
    )


def energy_split(u, omega: float, eps: float, grid, pot: Potential, C: float) -> float:
    """Two-term form int eps^2|grad u|^2/2 + W(u) + |C||omega|/2, valid on the constraint."""
    return 0.5 * eps * eps * grad_sq(u, grid) + integrate(grid, pot.W(u)) + 0.5 * abs(C) * abs(omega)


def reduced_energy(u, grid, spec: ChargeSpec, pot: Potential) -> float:
    s = l2sq(u, grid)
    if s <= TOL_ZERO:
        raise DegenerateFieldError(f"int u^2 = {s:.3e} is below {TOL_ZERO}")
    C = spec.C
    return 0.5 * spec.eps**2 * grad_sq(u, grid) + integrate(grid, pot.W(u)) + 0.5 * C * C / s


def _residual_vector(u, omega, eps, grid, pot):
    return eps * eps * (grid.stiffness @ u) / grid.weights + pot.Wprime(u) - omega * omega * u


def reduced_gradient(u, grid, spec: ChargeSpec, pot: Potential) -> np.ndarray:
    """-eps^2 Lap u + W'(u) - omega^2 u with omega = C / int u^2."""
    omega = omega_from_u(u, grid, spec.C)
    return _residual_vector(u, omega, spec.eps, grid, pot)


def weighted_norm(g, grid) -> float:
    return float(np.sqrt(np.dot(grid.weights, g * g)))


def pde_residual(u, omega: float, eps: float, grid, pot: Potential) -> float:
    r = _residual_vector(u, omega, eps, grid, pot)
    return weighted_norm(r, grid) / max(1.0, weighted_norm(u, grid))


def _moments(u, grid):
    d = grid.incidence @ u
    q = grid.kappa * d * d
    G = float(q.sum())
    if G <= TOL_ZERO:
        raise DegenerateFieldError("grad u vanishes; barycenter undefined")
    return d, q, G


def barycenter(u, grid) -> np.ndarray:
    """int x |grad u|^2 / int |grad u|^2 over cell edges.

    Each edge sits in two cells with weight 1/2, so the cell-centre moment
    reduces to an edge-midpoint moment.  Radial fields are centred at the origin.
    """
    if isinstance(grid, RadialGrid):
        _moments(u, grid)
        return np.zeros(grid.dim)
    _, q, G = _moments(u, grid)
    return (grid.edge_midpoints.T @ q) / G


def barycenter_gradient(u, grid: MaskedGrid):
    """Barycenter and its Jacobian (2, m) with respect to the nodal values."""
    d, q, G = _moments(u, grid)
    mid = grid.edge_midpoints
    beta = (mid.T @ q) / G
    kd = grid.kappa * d
    # d/du sum_e f_e kappa_e d_e^2 = 2 D^T (f kappa d)
    jac = np.empty((2, grid.size))
    for k in range(2):
        jac[k] = 2.0 * (grid.incidence.T @ ((mid[:, k] - beta[k]) * kd)) / G
    return beta, jac
