"""Line-oriented run configuration.

Grammar::

    # comment
    [section]
    key = value

Keys before the first header belong to ``[run]``.  Values are numbers,
``true``/``false``, bare strings, comma separated lists (``4, 6, 8``) or
semicolon separated point lists (``2.5 0; -2.5 0``).  Unknown sections or
keys, duplicate keys and out-of-range values are errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .potential import Potential

EXPERIMENTS = (
    "verify-potential",
    "minimize",
    "scan-rho",
    "check-scaling",
    "epsilon-bar",
    "localization",
    "multiplicity",
    "cutoff",
)


class ConfigError(ValueError):
    pass


def _f(kind, **extra):
    return {"kind": kind, **extra}


@dataclass(frozen=True)
class RunBlock:
    experiment: str = field(default="verify-potential", metadata=_f("str"))
    output: str = field(default="out", metadata=_f("str"))


@dataclass(frozen=True)
class PotentialBlock:
    omega0: float = field(default=1.0, metadata=_f("float"))
    a: float = field(default=0.25, metadata=_f("float"))
    b: float = field(default=0.03125, metadata=_f("float"))
    q: float = field(default=4.0, metadata=_f("float"))
    p: float = field(default=6.0, metadata=_f("float"))
    c1: float = field(default=1.0, metadata=_f("float"))
    c2: float = field(default=0.1875, metadata=_f("float"))
    s0: float = field(default=1.0, metadata=_f("float"))
    growth_exp: Optional[float] = field(default=None, metadata=_f("optfloat"))
    scan_max: float = field(default=10.0, metadata=_f("float"))
    scan_points: int = field(default=100_000, metadata=_f("int"))


@dataclass(frozen=True)
class ChargeBlock:
    # sigma = 20 is the smallest of {1, 2, 5, 10, 20, 50} whose ball minimizer
    # (eps = 1, rho = 8) reaches the nonlinear regime; see README
    sigma: float = field(default=20.0, metadata=_f("float"))
    eps: float = field(default=1.0, metadata=_f("float"))
    eps_grid: tuple = field(default=(0.5, 0.35, 0.25), metadata=_f("floats"))


@dataclass(frozen=True)
class DomainBlock:
    shape: str = field(default="ball", metadata=_f("str"))
    center: tuple = field(default=(0.0, 0.0), metadata=_f("floats"))
    rho: float = field(default=8.0, metadata=_f("float"))
    gamma: float = field(default=4.0, metadata=_f("float"))
    corners: tuple = field(default=(0.0, 0.0, 1.0, 1.0), metadata=_f("floats"))
    lobe_radius: float = field(default=1.0, metadata=_f("float"))
    lobe_offset: float = field(default=2.0, metadata=_f("float"))
    neck_halfwidth: float = field(default=0.3, metadata=_f("float"))
    mask_path: str = field(default="", metadata=_f("str"))
    r: float = field(default=0.25, metadata=_f("float"))
    cat_hint: int = field(default=1, metadata=_f("int"))
    h: float = field(default=0.0625, metadata=_f("float"))
    radial: bool = field(default=True, metadata=_f("bool"))
    dim: int = field(default=2, metadata=_f("int"))
    n_per_unit: int = field(default=32, metadata=_f("int"))


@dataclass(frozen=True)
class SolverBlock:
    max_iters: int = field(default=20000, metadata=_f("int"))
    grad_tol: float = field(default=1e-6, metadata=_f("float"))
    armijo_c: float = field(default=1e-4, metadata=_f("float"))
    backtrack: float = field(default=0.5, metadata=_f("float"))
    step0: float = field(default=1.0, metadata=_f("float"))
    penalty_weight: float = field(default=0.0, metadata=_f("float"))
    penalty_growth: float = field(default=10.0, metadata=_f("float"))
    seed: int = field(default=0, metadata=_f("int"))
    method: str = field(default="lbfgs", metadata=_f("str"))
    memory: int = field(default=10, metadata=_f("int"))


@dataclass(frozen=True)
class ScanBlock:
    rho_list: tuple = field(default=(4.0, 6.0, 8.0, 12.0, 16.0), metadata=_f("floats"))
    reference_rho: Optional[float] = field(default=None, metadata=_f("optfloat"))
    eps_pairs: tuple = field(default=((0.5, 4.0), (0.25, 2.0)), metadata=_f("points"))
    n: int = field(default=256, metadata=_f("int"))
    starts: str = field(default="lattice", metadata=_f("str"))
    n_starts: int = field(default=0, metadata=_f("int"))
    dedup_rel_energy: float = field(default=1e-6, metadata=_f("float"))
    dedup_bary_factor: float = field(default=2.0, metadata=_f("float"))
    certify: bool = field(default=False, metadata=_f("bool"))


@dataclass(frozen=True)
class RunConfig:
    run: RunBlock = field(default_factory=RunBlock)
    potential: PotentialBlock = field(default_factory=PotentialBlock)
    charge: ChargeBlock = field(default_factory=ChargeBlock)
    domain: DomainBlock = field(default_factory=DomainBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    scan: ScanBlock = field(default_factory=ScanBlock)

    def make_potential(self) -> Potential:
        p = self.potential
        return Potential(p.omega0, p.a, p.b, p.q, p.p, p.c1, p.c2, p.s0, p.growth_exp)

    def make_options(self):
        from .minimizer import SolveOptions

        s = self.solver
        return SolveOptions(**{f.name: getattr(s, f.name) for f in fields(s)})

    def make_shape(self):
        from .discretization import DomainShape

        d = self.domain
        return DomainShape(
            kind=d.shape,
            r=d.r,
            cat_hint=d.cat_hint,
            center=tuple(d.center),
            rho=d.rho,
            gamma=d.gamma,
            corners=tuple(d.corners),
            lobe_radius=d.lobe_radius,
            lobe_offset=d.lobe_offset,
            neck_halfwidth=d.neck_halfwidth,
            mask_path=d.mask_path or None,
        )


SECTIONS = {f.name: f.type for f in fields(RunConfig)}
_BLOCKS = {
    "run": RunBlock,
    "potential": PotentialBlock,
    "charge": ChargeBlock,
    "domain": DomainBlock,
    "solver": SolverBlock,
    "scan": ScanBlock,
}


# --------------------------------------------------------------------------
# value conversion


def _convert(kind: str, text: str, where: str):
    t = text.strip()
    try:
        if kind == "str":
            return t
        if kind == "int":
            return int(t)
        if kind == "float":
            return float(t)
        if kind == "optfloat":
            return None if t.lower() in ("", "none") else float(t)
        if kind == "bool":
            if t.lower() in ("true", "yes", "1"):
                return True
            if t.lower() in ("false", "no", "0"):
                return False
            raise ValueError(f"not a boolean: {t!r}")
        if kind == "floats":
            return tuple(float(v) for v in t.split(",") if v.strip())
        if kind == "points":
            return tuple(tuple(float(v) for v in p.split()) for p in t.split(";") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    raise AssertionError(kind)


def _render(kind: str, value) -> str:
    if value is None:
        return "none"
    if kind == "bool":
        return "true" if value else "false"
    if kind in ("float", "optfloat"):
        return repr(float(value))
    if kind == "floats":
        return ", ".join(repr(float(v)) for v in value)
    if kind == "points":
        return "; ".join(" ".join(repr(float(c)) for c in p) for p in value)
    return str(value)


# --------------------------------------------------------------------------
# parse / format


def parse_config(text: str, overrides=()) -> RunConfig:
    """Parse and validate; ``overrides`` are ``section.key=value`` strings applied last."""
    values = {name: {} for name in _BLOCKS}
    seen = {}
    section = "run"
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            if section not in _BLOCKS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if (section, key) in seen:
            raise ConfigError(f"line {lineno}: duplicate key {section}.{key} (first set on line {seen[section, key]})")
        seen[section, key] = lineno
        values[section][key] = (val, f"line {lineno}: {section}.{key}")

    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected section.key=value")
        path, val = item.split("=", 1)
        sec, _, key = path.strip().rpartition(".")
        sec = sec or "run"
        if sec not in _BLOCKS:
            raise ConfigError(f"--set {item!r}: unknown section {sec!r}")
        values[sec][key] = (val, f"--set {sec}.{key}")

    blocks = {}
    for name, cls in _BLOCKS.items():
        spec = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, (val, where) in values[name].items():
            if key not in spec:
                raise ConfigError(f"{where}: unknown key {key!r} in [{name}]")
            kwargs[key] = _convert(spec[key].metadata["kind"], val, where)
        blocks[name] = cls(**kwargs)
    cfg = RunConfig(**blocks)
    validate(cfg)
    return cfg


def format_config(cfg: RunConfig) -> str:
    out = []
    for name in _BLOCKS:
        block = getattr(cfg, name)
        out.append(f"[{name}]")
        for f in fields(block):
            out.append(f"{f.name} = {_render(f.metadata['kind'], getattr(block, f.name))}")
        out.append("")
    return "\n".join(out)


def _need(cond: bool, name: str, msg: str):
    if not cond:
        raise ConfigError(f"{name}: {msg}")


def validate(cfg: RunConfig) -> None:
    r, p, c, d, s, sc = cfg.run, cfg.potential, cfg.charge, cfg.domain, cfg.solver, cfg.scan
    _need(r.experiment in EXPERIMENTS, "experiment", f"must be one of {', '.join(EXPERIMENTS)}")
    _need(bool(r.output), "output", "must be a directory path")

    _need(p.a >= 0, "a", "must be >= 0")
    _need(p.b >= 0, "b", "must be >= 0")
    _need(2 < p.q <= p.p, "q", "growth exponents need 2 < q <= p")
    _need(p.c1 > 0, "c1", "must be > 0")
    _need(p.c2 > 0, "c2", "must be > 0")
    _need(p.scan_max > abs(p.s0), "scan_max", "must exceed |s0|")
    _need(p.scan_points >= 2, "scan_points", "must be >= 2")
    _need(p.growth_exp is None or p.growth_exp > 0, "growth_exp", "must be > 0")

    _need(c.sigma > 0, "sigma", "must be > 0")
    _need(c.eps > 0, "eps", "must be > 0")
    _need(all(e > 0 for e in c.eps_grid), "eps_grid", "entries must be > 0")
    _need(all(b < a for a, b in zip(c.eps_grid, c.eps_grid[1:])), "eps_grid", "must be strictly decreasing")

    _need(d.shape in ("ball", "annulus", "rectangle", "dumbbell", "mask"), "shape", "unknown domain shape")
    _need(len(d.center) == 2, "center", "needs two coordinates")
    _need(len(d.corners) == 4, "corners", "needs four numbers x0, y0, x1, y1")
    _need(d.rho > 0, "rho", "must be > 0")
    _need(d.gamma > 1, "gamma", "must be > 1")
    _need(d.r > 0, "r", "must be > 0")
    _need(d.cat_hint >= 1, "cat_hint", "must be >= 1")
    _need(d.h > 0, "h", "must be > 0")
    _need(d.dim in (1, 2, 3), "dim", "must be 1, 2 or 3")
    _need(d.n_per_unit >= 1, "n_per_unit", "must be >= 1")
    _need(d.lobe_radius > 0 and d.neck_halfwidth > 0, "lobe_radius", "dumbbell sizes must be > 0")
    _need(d.shape != "mask" or bool(d.mask_path), "mask_path", "required for shape = mask")
    _need(d.dim == 2 or (d.shape == "ball" and d.radial), "dim", "dimensions other than 2 need a radial ball")

    _need(s.max_iters >= 1, "max_iters", "must be >= 1")
    _need(s.grad_tol > 0, "grad_tol", "must be > 0")
    _need(0 < s.armijo_c < 1, "armijo_c", "must lie in (0, 1)")
    _need(0 < s.backtrack < 1, "backtrack", "must lie in (0, 1)")
    _need(s.step0 > 0, "step0", "must be > 0")
    _need(s.penalty_weight >= 0, "penalty_weight", "must be >= 0")
    _need(s.penalty_growth > 1, "penalty_growth", "must be > 1")
    _need(s.method in ("lbfgs", "steepest"), "method", "must be lbfgs or steepest")
    _need(s.memory >= 1, "memory", "must be >= 1")

    _need(all(x > 0 for x in sc.rho_list), "rho_list", "entries must be > 0")
    _need(sc.reference_rho is None or sc.reference_rho > 0, "reference_rho", "must be > 0")
    _need(all(len(pair) == 2 for pair in sc.eps_pairs), "eps_pairs", "entries are 'eps rho' pairs")
    _need(sc.n >= 3, "n", "must be >= 3")
    _need(sc.n_starts >= 0, "n_starts", "must be >= 0")
    _need(sc.dedup_rel_energy > 0, "dedup_rel_energy", "must be > 0")
    _need(sc.dedup_bary_factor > 0, "dedup_bary_factor", "must be > 0")
    _need(
        sc.starts in ("lattice", "antipodal") or all(len(p) == 2 for p in _points_or_none(sc.starts)),
        "starts",
        "must be 'lattice', 'antipodal' or a list 'x y; x y'",
    )


def _points_or_none(text: str):
    try:
        pts = _convert("points", text, "starts")
    except ConfigError:
        return [()]
    return pts or [()]


def parse_starts(text: str):
    """None for 'lattice', the string 'antipodal', or a list of points."""
    if text == "lattice":
        return None
    if text == "antipodal":
        return "antipodal"
    return [tuple(p) for p in _convert("points", text, "starts")]


def with_overrides(cfg: RunConfig, **blocks) -> RunConfig:
    """Copy of cfg with whole blocks or block fields replaced (``charge={'eps': 0.25}``)."""
    kw = {name: replace(getattr(cfg, name), **vals) for name, vals in blocks.items()}
    out = replace(cfg, **kw)
    validate(out)
    return out
