"""Discrete geometries: radial grids on balls and masked Cartesian grids in 2-D.

Both grid types expose the same small surface used by the functional:

* ``weights``   -- quadrature weight per unknown (integral f ~ sum w f)
* ``incidence`` -- sparse edge/node difference operator; the rows of edges
  touching the Dirichlet boundary carry a single entry (the outside value is 0)
* ``kappa``     -- per-edge coefficient so that
  ``integral |grad u|^2 ~ sum kappa * (incidence @ u)**2``
* ``stiffness`` -- ``incidence.T @ diag(kappa) @ incidence``; the grid
  Laplacian is ``-(stiffness @ u) / weights``

The Dirichlet form is therefore symmetric in the weighted inner product and
the energy gradient coincides with the finite-difference Laplacian.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

SPHERE_AREA = {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}


class GridError(ValueError):
    pass


# --------------------------------------------------------------------------
# radial grids


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Nodes r_i = i h, i = 1..n-1, on the ball of radius rho in dimension dim.

    u(rho) = 0 is imposed through the last edge; at the centre the reflected
    ghost value equals u(r_1), so the innermost edge carries no energy.
    """

    dim: int
    rho: float
    n: int

    @property
    def h(self) -> float:
        return self.rho / self.n

    @property
    def size(self) -> int:
        return self.n - 1

    @cached_property
    def r(self) -> np.ndarray:
        return np.arange(1, self.n, dtype=float) * self.h

    @cached_property
    def weights(self) -> np.ndarray:
        return SPHERE_AREA[self.dim] * self.r ** (self.dim - 1) * self.h

    @cached_property
    def _edge_coeff(self) -> np.ndarray:
        # i^(N-1) (1 + (N-1)/(2i)) for edges (i, i+1), i = 1..n-1
        i = np.arange(1, self.n, dtype=float)
        return i ** (self.dim - 1) * (1.0 + (self.dim - 1) / (2.0 * i))

    @cached_property
    def kappa(self) -> np.ndarray:
        return SPHERE_AREA[self.dim] * self.h ** (self.dim - 2) * self._edge_coeff

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        m = self.size
        rows = np.concatenate([np.arange(m), np.arange(m - 1)])
        cols = np.concatenate([np.arange(m), np.arange(1, m)])
        vals = np.concatenate([-np.ones(m), np.ones(m - 1)])
        return sp.csr_matrix((vals, (rows, cols)), shape=(m, m))

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        d = self.incidence
        return (d.T @ sp.diags(self.kappa) @ d).tocsr()

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        return laplacian_radial(self, u)

    def header(self) -> dict:
        return {"kind": "radial", "dim": self.dim, "rho": repr(float(self.rho)), "n": self.n}


def build_radial_grid(dim: int, rho: float, n: int) -> RadialGrid:
    if dim not in (1, 2, 3):
        raise GridError(f"radial grids support dim 1, 2, 3; got {dim}")
    if not rho > 0:
        raise GridError(f"ball radius must be positive, got {rho}")
    if int(n) != n or n < 3:
        raise GridError(f"node count must be an integer >= 3, got {n}")
    return RadialGrid(int(dim), float(rho), int(n))


def laplacian_radial(grid: RadialGrid, u: np.ndarray) -> np.ndarray:
    """u'' + (N-1)/r u' by central differences, ghost u_0 := u_1 and u_n := 0."""
    u = np.asarray(u, dtype=float)
    if u.shape != (grid.size,):
        raise GridError(f"expected {grid.size} nodal values, got shape {u.shape}")
    h = grid.h
    ext = np.empty(grid.size + 2)
    ext[1:-1] = u
    ext[0] = u[0]
    ext[-1] = 0.0
    if grid.dim == 3:
        # the u_0 coefficient vanishes identically in three dimensions
        ext[0] = 0.0
    i = np.arange(1, grid.n, dtype=float)
    beta = (grid.dim - 1) / (2.0 * i)
    return ((1.0 + beta) * ext[2:] - 2.0 * u + (1.0 - beta) * ext[:-2]) / (h * h)


# --------------------------------------------------------------------------
# masked Cartesian grids


@dataclass(frozen=True, eq=False)
class MaskedGrid:
    """Lattice points origin + (i h, j h); unknowns live on ``inside`` points.

    ``inside`` has shape (ny, nx) and is indexed [j, i].  Points outside the
    mask carry the homogeneous Dirichlet value 0.
    """

    origin: tuple
    h: float
    inside: np.ndarray

    @property
    def shape(self) -> tuple:
        return self.inside.shape

    @property
    def size(self) -> int:
        return int(self._index_map.max() + 1) if self.inside.any() else 0

    @cached_property
    def _index_map(self) -> np.ndarray:
        idx = -np.ones(self.inside.shape, dtype=np.int64)
        idx[self.inside] = np.arange(int(self.inside.sum()))
        return idx

    @cached_property
    def ij(self) -> np.ndarray:
        """(m, 2) integer lattice coordinates (i, j) of unknowns, row-major order."""
        j, i = np.nonzero(self.inside)
        return np.column_stack([i, j])

    @cached_property
    def points(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=float) + self.h * self.ij

    @cached_property
    def weights(self) -> np.ndarray:
        return np.full(self.size, self.h * self.h)

    @cached_property
    def _edges(self):
        idx = self._index_map
        ny, nx = idx.shape
        pad = -np.ones((ny + 2, nx + 2), dtype=np.int64)
        pad[1:-1, 1:-1] = idx
        a_list, b_list, mid_list = [], [], []
        o = np.asarray(self.origin, dtype=float)
        h = self.h
        # horizontal edges between lattice columns i and i+1 (i from -1..nx-1)
        left, right = pad[1:-1, :-1], pad[1:-1, 1:]
        sel = (left >= 0) | (right >= 0)
        jj, ii = np.nonzero(sel)
        a_list.append(left[sel])
        b_list.append(right[sel])
        mid_list.append(np.column_stack([o[0] + h * (ii - 0.5), o[1] + h * jj]))
        # vertical edges
        low, up = pad[:-1, 1:-1], pad[1:, 1:-1]
        sel = (low >= 0) | (up >= 0)
        jj, ii = np.nonzero(sel)
        a_list.append(low[sel])
        b_list.append(up[sel])
        mid_list.append(np.column_stack([o[0] + h * ii, o[1] + h * (jj - 0.5)]))
        return np.concatenate(a_list), np.concatenate(b_list), np.concatenate(mid_list)

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        a, b, _ = self._edges
        e = np.arange(a.size)
        rows = np.concatenate([e[a >= 0], e[b >= 0]])
        cols = np.concatenate([a[a >= 0], b[b >= 0]])
        vals = np.concatenate([-np.ones(int((a >= 0).sum())), np.ones(int((b >= 0).sum()))])
        return sp.csr_matrix((vals, (rows, cols)), shape=(a.size, self.size))

    @cached_property
    def edge_midpoints(self) -> np.ndarray:
        return self._edges[2]

    @cached_property
    def kappa(self) -> np.ndarray:
        # h^2 cell area times (difference / h)^2
        return np.ones(self._edges[0].size)

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        d = self.incidence
        return (d.T @ d).tocsr()

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        return laplacian_masked(self, u)

    def to_image(self, u: np.ndarray, fill: float = 0.0) -> np.ndarray:
        img = np.full(self.inside.shape, fill, dtype=float)
        img[self.inside] = u
        return img

    def lattice_keys(self) -> set:
        """Integer lattice coordinates shared by all grids with the same h."""
        k0 = np.rint(np.asarray(self.origin) / self.h).astype(np.int64)
        return {(int(i), int(j)) for i, j in self.ij + k0}

    def is_connected(self) -> bool:
        labels, count = ndimage.label(self.inside)
        return count == 1

    def header(self) -> dict:
        ny, nx = self.inside.shape
        return {
            "kind": "masked",
            "nx": nx,
            "ny": ny,
            "h": repr(float(self.h)),
            "origin": f"{float(self.origin[0])!r}, {float(self.origin[1])!r}",
        }


def laplacian_masked(grid: MaskedGrid, u: np.ndarray) -> np.ndarray:
    """Five-point stencil (u_E + u_W + u_N + u_S - 4u)/h^2 with zero outside the mask."""
    u = np.asarray(u, dtype=float)
    if u.shape != (grid.size,):
        raise GridError(f"expected {grid.size} nodal values, got shape {u.shape}")
    img = np.zeros((grid.shape[0] + 2, grid.shape[1] + 2))
    img[1:-1, 1:-1][grid.inside] = u
    lap = img[1:-1, 2:] + img[1:-1, :-2] + img[2:, 1:-1] + img[:-2, 1:-1] - 4.0 * img[1:-1, 1:-1]
    return lap[grid.inside] / (grid.h * grid.h)


def masked_grid_from_mask(
    origin: Sequence[float], h: float, inside: np.ndarray, require_connected: bool = True
) -> MaskedGrid:
    inside = np.asarray(inside, dtype=bool)
    if inside.ndim != 2:
        raise GridError("mask must be two-dimensional")
    if not h > 0:
        raise GridError("lattice spacing must be positive")
    if not inside.any():
        raise GridError("mask is empty")
    g = MaskedGrid((float(origin[0]), float(origin[1])), float(h), inside)
    if require_connected and not g.is_connected():
        raise GridError("mask is not connected")
    return g


def integrate(grid: Union[RadialGrid, MaskedGrid], f) -> float:
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.size,):
        raise GridError(f"expected {grid.size} values, got shape {f.shape}")
    return float(np.dot(grid.weights, f))


# --------------------------------------------------------------------------
# domain shapes


def _lattice_box(lo, hi, h):
    """Lattice aligned with integer multiples of h covering [lo, hi]."""
    i0 = math.floor(lo[0] / h) - 1
    j0 = math.floor(lo[1] / h) - 1
    i1 = math.ceil(hi[0] / h) + 1
    j1 = math.ceil(hi[1] / h) + 1
    xs = h * np.arange(i0, i1 + 1)
    ys = h * np.arange(j0, j1 + 1)
    X, Y = np.meshgrid(xs, ys)
    return (h * i0, h * j0), X, Y


@dataclass(frozen=True)
class DomainShape:
    """Bounded planar domain with localization radius r and a supplied LS category.

    ``kind`` is one of ``ball``, ``annulus``, ``rectangle``, ``dumbbell``, ``mask``.
    Signed distance is exact for ball, annulus and rectangle; dumbbell and
    mask domains fall back to a lattice distance transform.
    """

    kind: str
    r: float
    cat_hint: int = 1
    center: tuple = (0.0, 0.0)
    rho: float = 1.0
    gamma: float = 4.0
    corners: tuple = (0.0, 0.0, 1.0, 1.0)
    lobe_radius: float = 1.0
    lobe_offset: float = 2.0
    neck_halfwidth: float = 0.3
    mask_path: Optional[str] = None
    _mask: Optional[MaskedGrid] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("ball", "annulus", "rectangle", "dumbbell", "mask"):
            raise GridError(f"unknown domain shape {self.kind!r}")
        if not self.r > 0:
            raise GridError("localization radius r must be positive")
        if self.kind == "mask" and self._mask is None:
            if self.mask_path is None:
                raise GridError("mask domain needs mask_path")
            object.__setattr__(self, "_mask", read_mask_file(self.mask_path))

    # geometry -------------------------------------------------------------

    def bbox(self):
        cx, cy = self.center
        if self.kind == "ball":
            return (cx - self.rho, cy - self.rho), (cx + self.rho, cy + self.rho)
        if self.kind == "annulus":
            R = self.gamma * self.rho
            return (cx - R, cy - R), (cx + R, cy + R)
        if self.kind == "rectangle":
            x0, y0, x1, y1 = self.corners
            return (min(x0, x1), min(y0, y1)), (max(x0, x1), max(y0, y1))
        if self.kind == "dumbbell":
            L = self.lobe_offset + self.lobe_radius
            return (cx - L, cy - self.lobe_radius), (cx + L, cy + self.lobe_radius)
        pts = self._mask.points
        return tuple(pts.min(axis=0)), tuple(pts.max(axis=0))

    @property
    def diam(self) -> float:
        if self.kind == "ball":
            return 2.0 * self.rho
        if self.kind == "annulus":
            return 2.0 * self.gamma * self.rho
        if self.kind == "rectangle":
            x0, y0, x1, y1 = self.corners
            return math.hypot(x1 - x0, y1 - y0)
        if self.kind == "dumbbell":
            return 2.0 * (self.lobe_offset + self.lobe_radius)
        from scipy.spatial import ConvexHull
        from scipy.spatial.distance import pdist

        pts = self._mask.points
        if len(pts) > 3:
            pts = pts[ConvexHull(pts).vertices]
        return float(pdist(pts).max()) if len(pts) > 1 else 0.0

    @property
    def gamma_loc(self) -> float:
        """2 diam D / r."""
        return 2.0 * self.diam / self.r

    def signed_distance(self, X, Y) -> np.ndarray:
        """Exact signed distance to the boundary (negative inside) for analytic shapes."""
        cx, cy = self.center
        if self.kind == "ball":
            return np.hypot(X - cx, Y - cy) - self.rho
        if self.kind == "annulus":
            d = np.hypot(X - cx, Y - cy)
            return np.maximum(d - self.gamma * self.rho, self.rho - d)
        if self.kind == "rectangle":
            (x0, y0), (x1, y1) = self.bbox()
            qx = np.abs(X - 0.5 * (x0 + x1)) - 0.5 * (x1 - x0)
            qy = np.abs(Y - 0.5 * (y0 + y1)) - 0.5 * (y1 - y0)
            outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
            return outside + np.minimum(np.maximum(qx, qy), 0.0)
        raise GridError(f"no closed-form distance for {self.kind}")

    def contains(self, X, Y) -> np.ndarray:
        if self.kind in ("ball", "annulus", "rectangle"):
            return self.signed_distance(X, Y) < 0
        if self.kind == "dumbbell":
            cx, cy = self.center
            dx, dy = X - cx, Y - cy
            lobes = (np.hypot(dx - self.lobe_offset, dy) < self.lobe_radius) | (
                np.hypot(dx + self.lobe_offset, dy) < self.lobe_radius
            )
            neck = (np.abs(dx) <= self.lobe_offset) & (np.abs(dy) < self.neck_halfwidth)
            return lobes | neck
        m = self._mask
        k = np.rint((np.stack([X, Y], -1) - np.asarray(m.origin)) / m.h).astype(np.int64)
        ny, nx = m.inside.shape
        ok = (k[..., 0] >= 0) & (k[..., 0] < nx) & (k[..., 1] >= 0) & (k[..., 1] < ny)
        out = np.zeros(np.shape(X), dtype=bool)
        out[ok] = m.inside[k[..., 1][ok], k[..., 0][ok]]
        return out

    # grids ----------------------------------------------------------------

    def grid(self, h: float) -> MaskedGrid:
        if self.kind == "mask":
            if not math.isclose(h, self._mask.h):
                raise GridError("mask domains use the spacing stored in the mask file")
            return self._mask
        lo, hi = self.bbox()
        origin, X, Y = _lattice_box(lo, hi, h)
        return _cropped(origin, h, self.contains(X, Y), require_connected=True)

    def check(self, h: float) -> None:
        """Build-time checks: gamma > 1 and a nonempty 2r-erosion and r-ball inside D."""
        if not self.gamma_loc > 1:
            raise GridError(f"gamma = 2 diam/r must exceed 1, got {self.gamma_loc}")
        erode(self, 2.0 * self.r, h)


def _cropped(origin, h, inside, require_connected):
    if not inside.any():
        raise GridError("set is empty on the lattice")
    rows = np.flatnonzero(inside.any(axis=1))
    cols = np.flatnonzero(inside.any(axis=0))
    j0, j1 = max(rows[0] - 1, 0), min(rows[-1] + 2, inside.shape[0])
    i0, i1 = max(cols[0] - 1, 0), min(cols[-1] + 2, inside.shape[1])
    o = (origin[0] + h * i0, origin[1] + h * j0)
    return masked_grid_from_mask(o, h, inside[j0:j1, i0:i1], require_connected=require_connected)


def _edt_distance_field(shape: DomainShape, pad: float, h: float):
    """Lattice distance to the boundary, signed (negative inside), by distance transform."""
    lo, hi = shape.bbox()
    origin, X, Y = _lattice_box((lo[0] - pad, lo[1] - pad), (hi[0] + pad, hi[1] + pad), h)
    inside = shape.contains(X, Y)
    # boundary sits half a cell between an inside and an outside lattice point
    d_in = ndimage.distance_transform_edt(inside) * h - 0.5 * h
    d_out = ndimage.distance_transform_edt(~inside) * h - 0.5 * h
    return origin, X, Y, np.where(inside, -d_in, d_out)


def _offset_set(shape: DomainShape, signed_limit: float, h: float, pad: float) -> MaskedGrid:
    if shape.kind in ("ball", "annulus", "rectangle"):
        lo, hi = shape.bbox()
        origin, X, Y = _lattice_box((lo[0] - pad, lo[1] - pad), (hi[0] + pad, hi[1] + pad), h)
        sd = shape.signed_distance(X, Y)
    else:
        origin, X, Y, sd = _edt_distance_field(shape, pad, h)
    return _cropped(origin, h, sd <= signed_limit, require_connected=False)


def erode(shape: DomainShape, dist: float, h: float) -> MaskedGrid:
    """Points of D at distance >= dist from the boundary (D^- for dist = 2r)."""
    if dist < 0:
        raise GridError("erosion distance must be >= 0")
    if dist == 0:
        return shape.grid(h)
    try:
        return _offset_set(shape, -dist, h, pad=h)
    except GridError as exc:
        raise GridError(f"erosion by {dist} leaves an empty set (r too large)") from exc


def dilate(shape: DomainShape, dist: float, h: float) -> MaskedGrid:
    """Points within distance dist of D (D^+ for dist = r)."""
    if dist < 0:
        raise GridError("dilation distance must be >= 0")
    if dist == 0:
        return shape.grid(h)
    return _offset_set(shape, dist, h, pad=dist + 2 * h)


def point_in_mask(grid: MaskedGrid, y, tol: Optional[float] = None) -> bool:
    """True when y lies within tol (default h/2 in each axis) of an inside lattice point."""
    tol = 0.5 * grid.h if tol is None else tol
    d = np.max(np.abs(grid.points - np.asarray(y, dtype=float)), axis=1)
    return bool(d.min() <= tol + 1e-12)


def distance_to_mask(grid: MaskedGrid, y) -> float:
    return float(np.min(np.hypot(*(grid.points - np.asarray(y, dtype=float)).T)))


def default_starts(shape: DomainShape, h: float, spacing: Optional[float] = None) -> list:
    """Lattice of points in D^- with the given spacing (default r)."""
    dminus = erode(shape, 2.0 * shape.r, h)
    step = shape.r if spacing is None else spacing
    pts = dminus.points
    keys = np.rint(pts / step).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    chosen = pts[np.sort(first)]
    return [tuple(map(float, p)) for p in chosen]


# --------------------------------------------------------------------------
# grid file format (mask files and field dumps)
#
#   # comment lines
#   kind = masked | radial
#   key = value            (masked: nx, ny, h, origin = x0, y0;
#                           radial: dim, rho, n)
#   data
#   <payload>
#
# A mask payload has ny rows of nx whitespace separated 0/1 values, first row
# at y = origin_y.  A field payload has one value per line for every unknown
# (masked: inside points in row-major order, radial: nodes r_1..r_{n-1}).


def _parse_header(lines, path):
    header = {}
    for lineno, line in enumerate(lines, 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if s == "data":
            return header, lineno
        if "=" not in s:
            raise GridError(f"{path}:{lineno}: expected 'key = value' or 'data'")
        k, v = (t.strip() for t in s.split("=", 1))
        header[k] = v
    raise GridError(f"{path}: missing 'data' line")


def _masked_from_header(header, inside, path) -> MaskedGrid:
    try:
        h = float(header["h"])
        ox, oy = (float(t) for t in header["origin"].split(","))
    except (KeyError, ValueError) as exc:
        raise GridError(f"{path}: bad masked-grid header: {exc}") from exc
    return MaskedGrid((ox, oy), h, inside)


def read_mask_file(path) -> MaskedGrid:
    lines = Path(path).read_text().splitlines()
    header, start = _parse_header(lines, path)
    if header.get("kind", "masked") != "masked":
        raise GridError(f"{path}: mask files must be kind = masked")
    nx, ny = int(header["nx"]), int(header["ny"])
    rows = [ln.split() for ln in lines[start:] if ln.strip()]
    if len(rows) != ny or any(len(r) != nx for r in rows):
        raise GridError(f"{path}: expected {ny} rows of {nx} values")
    inside = np.array([[int(v) for v in r] for r in rows], dtype=int)
    if not np.isin(inside, (0, 1)).all():
        raise GridError(f"{path}: mask values must be 0 or 1")
    g = _masked_from_header(header, inside.astype(bool), path)
    return masked_grid_from_mask(g.origin, g.h, g.inside)


def write_mask_file(path, grid: MaskedGrid) -> None:
    out = ["# kleinwave grid"]
    out += [f"{k} = {v}" for k, v in grid.header().items()]
    out.append("data")
    out += [" ".join("1" if v else "0" for v in row) for row in grid.inside]
    Path(path).write_text("\n".join(out) + "\n")


def write_field(path, grid, u: np.ndarray, extra: Optional[dict] = None) -> None:
    out = ["# kleinwave field"]
    out += [f"{k} = {v}" for k, v in grid.header().items()]
    if isinstance(grid, MaskedGrid):
        out.append("mask = " + ";".join("".join("1" if v else "0" for v in row) for row in grid.inside))
    for k, v in (extra or {}).items():
        out.append(f"{k} = {v}")
    out.append("data")
    out += [repr(float(v)) for v in u]
    Path(path).write_text("\n".join(out) + "\n")


def read_field(path):
    lines = Path(path).read_text().splitlines()
    header, start = _parse_header(lines, path)
    values = np.array([float(v) for v in lines[start:] if v.strip()])
    if header.get("kind") == "radial":
        grid = build_radial_grid(int(header["dim"]), float(header["rho"]), int(header["n"]))
    else:
        inside = np.array([[c == "1" for c in row] for row in header["mask"].split(";")])
        grid = _masked_from_header(header, inside, path)
    if values.size != grid.size:
        raise GridError(f"{path}: {values.size} values for a grid with {grid.size} unknowns")
    return grid, values
