"""Polynomial nonlinearity W(s) = Omega^2 s^2 / 2 + N(s) and scan-based hypothesis checks.

The default model uses N(s) = -a s^4 + b s^6.  With Omega = 1, a = 1/4,
b = 1/32 the potential factors as W(s) = s^2 (s^2 - 4)^2 / 32, which is
nonnegative with a double root at s = 2.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class Potential:
    omega0: float = 1.0
    a: float = 0.25
    b: float = 0.03125
    q: float = 4.0
    p: float = 6.0
    c1: float = 1.0
    c2: float = 0.1875
    s0: float = 1.0
    growth_exp: Optional[float] = None

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError("quartic and sextic coefficients must be >= 0")
        if not (2.0 < self.q <= self.p):
            raise ValueError(f"growth exponents need 2 < q <= p, got q={self.q}, p={self.p}")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("growth constants c1, c2 must be positive")

    def N(self, s):
        s2 = np.square(s)
        return s2 * s2 * (self.b * s2 - self.a)

    def Nprime(self, s):
        s2 = np.square(s)
        return s * s2 * (6.0 * self.b * s2 - 4.0 * self.a)

    def W(self, s):
        return 0.5 * self.omega0**2 * np.square(s) + self.N(s)

    def Wprime(self, s):
        return self.omega0**2 * s + self.Nprime(s)

    def W_increment(self, s, t):
        """W(s + t) - W(s) without cancellation for small t."""
        s2 = s * s
        quad = 0.5 * self.omega0**2 * (2.0 * s + t) * t
        quart = t * (4.0 * s * s2 + t * (6.0 * s2 + t * (4.0 * s + t)))
        sext = t * (
            6.0 * s2 * s2 * s
            + t * (15.0 * s2 * s2 + t * (20.0 * s2 * s + t * (15.0 * s2 + t * (6.0 * s + t))))
        )
        return quad - self.a * quart + self.b * sext

    def third_derivative_bound(self, s_max: float) -> float:
        """max |W'''(s)| on [-s_max, s_max] (monotone in |s| for a, b >= 0)."""
        # W''' = -24 a s + 120 b s^3
        s = np.linspace(0.0, s_max, 2001)
        return float(np.max(np.abs(-24.0 * self.a * s + 120.0 * self.b * s**3)))

    def to_dict(self) -> dict:
        return asdict(self)


def eval_W(pot: Potential, s):
    return pot.W(s)


def eval_Wprime(pot: Potential, s):
    return pot.Wprime(s)


def critical_exponent(dim: int) -> float:
    """Sobolev exponent 2* = 2N/(N-2), infinite for N <= 2."""
    if dim <= 2:
        return math.inf
    return 2.0 * dim / (dim - 2.0)


@dataclass(frozen=True)
class ScanParams:
    s_max: float = 10.0
    points: int = 100_000
    tol_scan: float = 1e-12

    def grid(self) -> np.ndarray:
        if not self.s_max > 0 or self.points < 2:
            raise ValueError("empty scan range: need s_max > 0 and at least 2 points")
        return np.linspace(0.0, self.s_max, self.points)


@dataclass
class HypothesisReport:
    w1_ok: bool
    w1_min_value: float
    w1_argmin: float
    w2_ok: bool
    w2_witness: float
    w2_value: float
    np_ok: bool
    np_margin: float
    np_worst_s: float
    np_constants: tuple
    quad_bound: tuple  # (delta, beta1)
    subcritical_ok: bool
    critical_exponent: float
    dim: int
    growth_ok: Optional[bool] = None
    growth_radius: Optional[float] = None
    scan: dict = field(default_factory=dict)

    @property
    def all_ok(self) -> bool:
        return self.w1_ok and self.w2_ok and self.np_ok and self.subcritical_ok and self.quad_bound[0] > 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["critical_exponent"] = None if math.isinf(self.critical_exponent) else self.critical_exponent
        d["all_ok"] = self.all_ok
        return d


def _quadratic_bound_delta(pot: Potential, s: np.ndarray, beta1: float) -> float:
    # largest scanned delta such that W(s) >= beta1 s^2 on [0, delta]
    ok = pot.W(s) >= beta1 * s * s
    bad = np.flatnonzero(~ok)
    if bad.size == 0:
        return float(s[-1])
    first = bad[0]
    return float(s[first - 1]) if first > 0 else 0.0


def verify_hypotheses(pot: Potential, dim: int, scan: ScanParams = ScanParams()) -> HypothesisReport:
    """Check positivity, the negative-N witness, the growth bound and subcriticality by dense scan.

    Failed hypotheses are reported through the boolean fields, never raised.
    Only the nonnegative half-line is scanned; W and |N'| are even in s.
    """
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    if scan.s_max <= abs(pot.s0):
        raise ValueError("scan range must extend beyond the witness s0")
    s = scan.grid()

    w = pot.W(s)
    k = int(np.argmin(w))
    w1_ok = bool(w[k] >= -scan.tol_scan)

    n_s0 = float(pot.N(pot.s0))
    w2_ok = n_s0 < 0.0

    lhs = np.abs(pot.Nprime(s))
    rhs = pot.c1 * s ** (pot.q - 1.0) + pot.c2 * s ** (pot.p - 1.0)
    slack = rhs - lhs
    j = int(np.argmin(slack))
    # relative tolerance so that equality cases (e.g. c2 = 6b, p = 6) pass
    np_ok = bool(np.all(slack >= -1e-12 * np.maximum(1.0, rhs)))

    beta1 = pot.omega0**2 / 4.0
    delta = _quadratic_bound_delta(pot, s, beta1)

    crit = critical_exponent(dim)
    subcritical_ok = bool(pot.p < crit)

    growth_ok = growth_worst = None
    if pot.growth_exp is not None:
        # N(s) <= -|s|^(2+g) on some (0, r]; r is the last scan point before the first failure
        pos = s[1:]
        bad = np.flatnonzero(-np.power(pos, 2.0 + pot.growth_exp) - pot.N(pos) < 0)
        first_bad = int(bad[0]) if bad.size else pos.size
        growth_ok = first_bad >= 10
        growth_worst = float(pos[first_bad - 1]) if first_bad > 0 else 0.0

    return HypothesisReport(
        w1_ok=w1_ok,
        w1_min_value=float(w[k]),
        w1_argmin=float(s[k]),
        w2_ok=w2_ok,
        w2_witness=float(pot.s0),
        w2_value=n_s0,
        np_ok=np_ok,
        np_margin=float(slack[j]),
        np_worst_s=float(s[j]),
        np_constants=(pot.c1, pot.c2, pot.q, pot.p),
        quad_bound=(delta, beta1),
        subcritical_ok=subcritical_ok,
        critical_exponent=crit,
        dim=dim,
        growth_ok=growth_ok,
        growth_radius=growth_worst,
        scan={"s_max": scan.s_max, "points": scan.points, "tol_scan": scan.tol_scan},
    )
