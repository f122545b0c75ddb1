"""Polarization matrices of inclusions from a second-kind boundary integral equation.

The inclusion boundary is approximated by flat panels.  The layer density q
is piecewise constant and satisfies, at every panel midpoint x,

    c q(x)/2 + int q(y) grad E(x - y) . n(x) ds(y) = g . n(x),   int q ds = 0,

with c = (nu0 + nu1)/(nu0 - nu1) and E(z) = -ln|z| / (2 pi).  The polarization
matrix maps g to the first moment int q(y) y ds(y).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import ContrastError, ShapeError, SolverError


@dataclass(frozen=True, eq=False)
class InclusionShape:
    """Closed counterclockwise polyline around the origin."""

    vertices: np.ndarray     # (n, 2); panel i runs from vertex i to vertex i+1
    midpoints: np.ndarray
    lengths: np.ndarray
    normals: np.ndarray      # outward unit normals
    curvature: np.ndarray    # signed curvature of the underlying curve at each panel
    area: float
    label: str = "polygon"

    @property
    def n_panels(self) -> int:
        return len(self.lengths)

    def divergence_area(self) -> float:
        return 0.5 * float(np.sum(self.lengths * np.einsum("ij,ij->i", self.midpoints, self.normals)))

    def moment_matrix(self) -> np.ndarray:
        """Discrete int x n^T ds; equals area * I on a closed polygon."""
        return np.einsum("i,ij,ik->jk", self.lengths, self.midpoints, self.normals)


@dataclass(frozen=True, eq=False)
class PanelDensity:
    q: np.ndarray
    residual: float
    multiplier: float


@dataclass(frozen=True, eq=False)
class PolarizationMatrix:
    matrix: np.ndarray
    nu0: float
    nu1: float
    shape: InclusionShape
    moment_error: float

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)


def _shoelace(v):
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_cross(p1, p2, p3, p4):
    def orient(a, b, c):
        return np.sign((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    return (orient(p1, p2, p3) * orient(p1, p2, p4) < 0) and (orient(p3, p4, p1) * orient(p3, p4, p2) < 0)


def _contains(v, point):
    x, y = point
    inside = False
    for (x1, y1), (x2, y2) in zip(v, np.roll(v, -1, axis=0)):
        if (y1 > y) != (y2 > y) and x < x1 + (y - y1) * (x2 - x1) / (y2 - y1):
            inside = not inside
    return inside


def _from_vertices(v, curvature, label):
    w = np.roll(v, -1, axis=0)
    d = w - v
    lengths = np.linalg.norm(d, axis=1)
    if np.any(lengths <= 0):
        raise ShapeError("repeated vertex")
    normals = np.stack([d[:, 1], -d[:, 0]], axis=1) / lengths[:, None]
    return InclusionShape(v, 0.5 * (v + w), lengths, normals, np.asarray(curvature, float),
                          _shoelace(v), label)


def disk(n: int = 256) -> InclusionShape:
    return ellipse(1.0, 1.0, n=n, label="disk")


def ellipse(a: float, b: float, angle: float = 0.0, n: int = 256, label: Optional[str] = None) -> InclusionShape:
    """Ellipse with semi-axes a (along `angle`) and b, uniform in the parameter."""
    if n < 16:
        raise ShapeError("need at least 16 panels")
    if not (a > 0 and b > 0):
        raise ShapeError("semi-axes must be positive")
    t = 2 * math.pi * np.arange(n) / n
    tm = t + math.pi / n
    v = np.stack([a * np.cos(t), b * np.sin(t)], axis=1)
    kappa = a * b / (a ** 2 * np.sin(tm) ** 2 + b ** 2 * np.cos(tm) ** 2) ** 1.5
    c, s = math.cos(angle), math.sin(angle)
    v = v @ np.array([[c, s], [-s, c]])
    return _from_vertices(v, kappa, label or f"ellipse({a:g},{b:g})")


def polygon(vertices, n: int = 256) -> InclusionShape:
    """Polygon with `n` panels spread over its edges in proportion to edge length.

    Clockwise input is reoriented with a warning.
    """
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
        raise ShapeError("polygon needs at least three (x, y) vertices")
    m = len(v)
    if n < max(16, m):
        raise ShapeError(f"need at least max(16, {m}) panels")
    for i in range(m):
        for j in range(i + 1, m):
            if j == i + 1 or (i == 0 and j == m - 1):
                continue
            if _segments_cross(v[i], v[(i + 1) % m], v[j], v[(j + 1) % m]):
                raise ShapeError(f"self-intersecting polygon (edges {i} and {j})")
    area = _shoelace(v)
    if area == 0:
        raise ShapeError("polygon has zero area")
    if area < 0:
        warnings.warn("clockwise polygon reoriented to counterclockwise", stacklevel=2)
        v = v[::-1].copy()
    if not _contains(v, (0.0, 0.0)):
        raise ShapeError("polygon must contain the origin")
    edge = np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)
    counts = np.maximum(1, np.floor(n * edge / edge.sum()).astype(int))
    while counts.sum() < n:
        counts[np.argmax(edge / counts)] += 1
    while counts.sum() > n:
        k = np.argmax(np.where(counts > 1, counts / edge, -np.inf))
        counts[k] -= 1
    pts = []
    for i in range(m):
        s = np.arange(counts[i])[:, None] / counts[i]
        pts.append(v[i] + s * (v[(i + 1) % m] - v[i]))
    return _from_vertices(np.concatenate(pts), np.zeros(n), "polygon")


def panelize(spec: str, n: int = 256) -> InclusionShape:
    """Build a shape from ``disk``, ``ellipse:a,b[,angle]`` or ``polygon:x1,y1;x2,y2;...``."""
    spec = spec.strip()
    try:
        if spec == "disk":
            return disk(n)
        kind, _, args = spec.partition(":")
        if kind == "ellipse":
            vals = [float(x) for x in args.split(",")]
            if len(vals) not in (2, 3):
                raise ValueError
            return ellipse(*vals[:2], angle=vals[2] if len(vals) == 3 else 0.0, n=n)
        if kind == "polygon":
            verts = [[float(c) for c in p.split(",")] for p in args.split(";") if p.strip()]
            return polygon(verts, n)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ShapeError):
            raise
        raise ShapeError(f"malformed shape spec {spec!r}") from None
    raise ShapeError(f"unknown shape spec {spec!r}")


def _system(shape: InclusionShape, nu0: float, nu1: float) -> np.ndarray:
    if nu0 == nu1:
        raise ContrastError("nu0 == nu1: zero contrast, the density equation is undefined")
    c = (nu0 + nu1) / (nu0 - nu1)
    x, n, ln = shape.midpoints, shape.normals, shape.lengths
    d = x[:, None, :] - x[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", d, d)
    np.fill_diagonal(r2, 1.0)
    kern = -np.einsum("ijk,ik->ij", d, n) / (2 * math.pi * r2)
    np.fill_diagonal(kern, -shape.curvature / (4 * math.pi))
    A = kern * ln[None, :]
    A[np.diag_indices_from(A)] += 0.5 * c
    m = shape.n_panels
    big = np.zeros((m + 1, m + 1))
    big[:m, :m] = A
    big[:m, m] = 1.0
    big[m, :m] = ln
    return big


def solve_density(shape: InclusionShape, nu0: float, nu1: float, g) -> PanelDensity:
    """Panel density q for the gradient direction `g`; zero mean enforced by a multiplier."""
    return _solve(_system(shape, nu0, nu1), shape, np.atleast_2d(np.asarray(g, float)).T)[0]


def _solve(big, shape, G):
    m = shape.n_panels
    rhs = np.zeros((m + 1, G.shape[1]))
    rhs[:m] = shape.normals @ G
    try:
        sol = np.linalg.solve(big, rhs)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"singular density system: {exc}") from None
    out = []
    for k in range(G.shape[1]):
        nb = max(np.linalg.norm(rhs[:, k]), 1e-300)
        res = float(np.linalg.norm(big @ sol[:, k] - rhs[:, k]) / nb)
        if not np.isfinite(res) or (res > 1e-10 and np.linalg.norm(rhs[:, k]) > 0):
            raise SolverError(f"density residual {res:.2e} exceeds 1e-10", residual=res)
        out.append(PanelDensity(sol[:m, k].copy(), res, float(sol[m, k])))
    return out


def polarization_matrix(shape: InclusionShape, nu0: float, nu1: float) -> PolarizationMatrix:
    """Columns are the first moments of q for g = e1 and g = e2."""
    big = _system(shape, nu0, nu1)
    dens = _solve(big, shape, np.eye(2))
    P = np.stack([np.einsum("i,ij->j", shape.lengths * d.q, shape.midpoints) for d in dens], axis=1)
    moment = shape.moment_matrix()
    err = float(np.abs(moment - shape.area * np.eye(2)).max() / abs(shape.area))
    return PolarizationMatrix(P, float(nu0), float(nu1), shape, err)


def ellipse_polarization_exact(a: float, b: float, nu0: float, nu1: float, angle: float = 0.0) -> np.ndarray:
    """Closed form for an ellipse: diag((k-1)(a+b)|D|/(a+kb), (k-1)(a+b)|D|/(b+ka)), k = nu0/nu1."""
    k = nu0 / nu1
    area = math.pi * a * b
    P = np.diag([(k - 1) * (a + b) * area / (a + k * b), (k - 1) * (a + b) * area / (b + k * a)])
    c, s = math.cos(angle), math.sin(angle)
    R = np.array([[c, -s], [s, c]])
    return R @ P @ R.T
