"""Tagged triangular meshes: construction, text I/O and geometric queries.

Region tags are small integers stored per triangle:

====== =====================================================
AIR    0   air, coils and flux-barrier pockets
IRON   1   fixed ferromagnetic material
DESIGN 2   ferromagnetic material that the optimizer may remove
>= 10      permanent magnet; the tag keys ``Mesh.magnets``
====== =====================================================

Boundary edges carry a marker; ``DIRICHLET`` (1) pins the potential to zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterable, TextIO, Tuple

import numpy as np

from .exceptions import DegenerateElementError, MeshError

AIR = 0
IRON = 1
DESIGN = 2
MAGNET_BASE = 10
DIRICHLET = 1

_AREA_EPS = 1e-14


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ElementGeometry:
    """Area and constant P1 basis gradients of one triangle."""

    area: float
    grad_basis: np.ndarray  # (3, 2)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangulation with region tags and boundary markers.

    Parameters
    ----------
    nodes : (N, 2) array of coordinates in meters.
    triangles : (M, 3) array of node indices, counterclockwise.
    tags : (M,) region tag per triangle.
    boundary : (B, 2) node pairs of boundary edges.
    markers : (B,) marker per boundary edge.
    magnets : mapping magnet tag -> magnetization vector (A/m).

    All invariants are checked on construction and a `MeshError` naming the
    offending entity is raised on violation.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    tags: np.ndarray
    boundary: np.ndarray
    markers: np.ndarray
    magnets: Dict[int, Tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "nodes", _readonly(np.reshape(self.nodes, (-1, 2)), float))
        set_(self, "triangles", _readonly(np.reshape(self.triangles, (-1, 3)), np.int64))
        set_(self, "tags", _readonly(np.ravel(self.tags), np.int64))
        set_(self, "boundary", _readonly(np.reshape(self.boundary, (-1, 2)), np.int64))
        set_(self, "markers", _readonly(np.ravel(self.markers), np.int64))
        set_(self, "magnets", {int(k): (float(v[0]), float(v[1]))
                               for k, v in sorted(self.magnets.items())})
        self._validate()

    # -- validation -------------------------------------------------------
    def _validate(self):
        n, m = len(self.nodes), len(self.triangles)
        if m == 0:
            raise MeshError("mesh has no triangles")
        if not np.all(np.isfinite(self.nodes)):
            raise MeshError("non-finite node coordinates")
        if len(self.tags) != m:
            raise MeshError(f"{len(self.tags)} tags for {m} triangles")
        bad = np.flatnonzero((self.triangles < 0).any(1) | (self.triangles >= n).any(1))
        if bad.size:
            raise MeshError(f"triangle {bad[0]} references a node index outside 0..{n - 1}")
        area = self.signed_areas
        bad = np.flatnonzero(area <= _AREA_EPS * max(self.extent ** 2, 1e-300))
        if bad.size:
            raise MeshError(f"triangle {bad[0]} has non-positive signed area {area[bad[0]]:.3e}")
        for k in np.unique(self.tags):
            if k in (AIR, IRON, DESIGN):
                continue
            if k < MAGNET_BASE:
                raise MeshError(f"triangle {np.flatnonzero(self.tags == k)[0]} has unknown tag {k}")
            if int(k) not in self.magnets:
                raise MeshError(f"magnet tag {k} has no magnetization record")
        for k in self.magnets:
            if k < MAGNET_BASE:
                raise MeshError(f"magnet record uses reserved tag {k}")
        if len(self.markers) != len(self.boundary):
            raise MeshError(f"{len(self.markers)} markers for {len(self.boundary)} boundary edges")
        bad = np.flatnonzero((self.boundary < 0).any(1) | (self.boundary >= n).any(1))
        if bad.size:
            raise MeshError(f"boundary edge {bad[0]} references a node index outside 0..{n - 1}")
        declared = {tuple(e) for e in np.sort(self.boundary, axis=1).tolist()}
        if len(declared) != len(self.boundary):
            raise MeshError("duplicate boundary edge")
        actual = {tuple(e) for e in self._boundary_edges_topological.tolist()}
        extra = declared - actual
        if extra:
            raise MeshError(f"boundary edge {sorted(extra)[0]} is not on the topological boundary")
        missing = actual - declared
        if missing:
            raise MeshError(f"topological boundary edge {sorted(missing)[0]} has no marker")

    # -- basic geometry ----------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @cached_property
    def extent(self) -> float:
        return float(np.ptp(self.nodes, axis=0).max())

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @cached_property
    def grad_basis(self) -> np.ndarray:
        """(M, 3, 2) constant gradients of the three barycentric functions."""
        p = self.nodes[self.triangles]
        # grad(lambda_i) = rot90(edge opposite i) / (2 area)
        e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
        g = np.stack([-e[..., 1], e[..., 0]], axis=-1)
        return g / (2.0 * self.signed_areas)[:, None, None]

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        edges = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
        return np.linalg.norm(edges, axis=-1).max(axis=1)

    # -- topology ------------------------------------------------------------
    @cached_property
    def _edge_table(self):
        # local edge j is opposite local vertex j
        t = self.triangles
        e = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1).reshape(-1, 2)
        e = np.sort(e, axis=1)
        uniq, inv, counts = np.unique(e, axis=0, return_inverse=True, return_counts=True)
        return uniq, inv.ravel(), counts

    @cached_property
    def _boundary_edges_topological(self) -> np.ndarray:
        uniq, _, counts = self._edge_table
        if (counts > 2).any():
            raise MeshError(f"edge {tuple(uniq[np.argmax(counts > 2)])} shared by more than two triangles")
        return uniq[counts == 1]

    @cached_property
    def neighbors(self) -> np.ndarray:
        """(M, 3) triangle across the edge opposite each local vertex, -1 on the boundary."""
        _, inv, _ = self._edge_table
        m = self.n_elements
        owner = np.repeat(np.arange(m), 3)
        order = np.argsort(inv, kind="stable")
        inv_s, own_s = inv[order], owner[order]
        nb = np.full(3 * m, -1, dtype=np.int64)
        same = np.flatnonzero(inv_s[1:] == inv_s[:-1])
        nb[order[same]] = own_s[same + 1]
        nb[order[same + 1]] = own_s[same]
        nb = nb.reshape(m, 3)
        nb.setflags(write=False)
        return nb

    @cached_property
    def node_elements(self):
        """CSR-style (indptr, elements) listing the triangles around every node."""
        flat = self.triangles.ravel()
        order = np.argsort(flat, kind="stable")
        indptr = np.searchsorted(flat[order], np.arange(self.n_nodes + 1))
        return indptr, order // 3

    @cached_property
    def dirichlet_nodes(self) -> np.ndarray:
        return np.unique(self.boundary[self.markers == DIRICHLET])

    @cached_property
    def free_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.dirichlet_nodes] = False
        return np.flatnonzero(mask)

    # -- region queries ------------------------------------------------------
    @cached_property
    def design_elements(self) -> np.ndarray:
        ids = np.flatnonzero(self.tags == DESIGN)
        ids.setflags(write=False)
        return ids

    @cached_property
    def magnet_mask(self) -> np.ndarray:
        return self.tags >= MAGNET_BASE

    def region(self, tag: int) -> np.ndarray:
        return np.flatnonzero(self.tags == tag)

    def element_magnetization(self) -> np.ndarray:
        """(M, 2) magnetization per element, zero outside magnets."""
        mag = np.zeros((self.n_elements, 2))
        for tag, vec in self.magnets.items():
            mag[self.tags == tag] = vec
        return mag

    def with_magnets(self, magnets) -> "Mesh":
        return Mesh(self.nodes, self.triangles, self.tags, self.boundary, self.markers, magnets)

    def with_tags(self, tags, magnets=None) -> "Mesh":
        return Mesh(self.nodes, self.triangles, tags, self.boundary, self.markers,
                    self.magnets if magnets is None else magnets)

    # -- point location ------------------------------------------------------
    def barycentric(self, elem: int, point) -> np.ndarray:
        p = self.nodes[self.triangles[elem]]
        g = self.grad_basis[elem]
        x = np.asarray(point, dtype=float)
        # lambda_i vanishes at the next vertex
        return np.array([g[i] @ (x - p[(i + 1) % 3]) for i in range(3)])

    def locate(self, point, start: int = 0, tol: float = 1e-12) -> int:
        """Triangle containing `point`, found by a visibility walk from `start`.

        Falls back to an exhaustive search when the walk leaves the domain
        (non-convex meshes).  Raises `MeshError` if the point is outside.
        """
        elem = int(start)
        for _ in range(4 * self.n_elements + 10):
            lam = self.barycentric(elem, point)
            j = int(np.argmin(lam))
            if lam[j] >= -tol:
                return elem
            nxt = self.neighbors[elem, j]
            if nxt < 0:
                break
            elem = int(nxt)
        return self._locate_brute(point, tol)

    def _locate_brute(self, point, tol):
        x = np.asarray(point, dtype=float)
        p1 = self.nodes[self.triangles[:, [1, 2, 0]]]
        lam = np.einsum("mij,mij->mi", self.grad_basis, x - p1)
        inside = np.flatnonzero(lam.min(axis=1) >= -tol)
        if inside.size == 0:
            raise MeshError(f"point ({x[0]:.6g}, {x[1]:.6g}) is outside the mesh")
        return int(inside[0])


def element_geometry(mesh: Mesh, elem: int) -> ElementGeometry:
    if not 0 <= elem < mesh.n_elements:
        raise MeshError(f"element id {elem} out of range")
    return ElementGeometry(float(mesh.signed_areas[elem]), mesh.grad_basis[elem].copy())


def triangle_geometry(vertices) -> ElementGeometry:
    """Area and P1 gradients for three loose vertices (no mesh needed)."""
    p = np.asarray(vertices, dtype=float).reshape(3, 2)
    d1, d2 = p[1] - p[0], p[2] - p[0]
    area = 0.5 * (d1[0] * d2[1] - d1[1] * d2[0])
    scale = max(np.ptp(p, axis=0).max(), 1e-300) ** 2
    if abs(area) <= _AREA_EPS * scale:
        raise DegenerateElementError("degenerate triangle: vertices are collinear")
    e = np.array([p[2] - p[1], p[0] - p[2], p[1] - p[0]])
    g = np.stack([-e[:, 1], e[:, 0]], axis=-1) / (2.0 * area)
    return ElementGeometry(abs(area), g)


# ---------------------------------------------------------------------------
# Motor geometry
# ---------------------------------------------------------------------------

_RADII = ("r_shaft", "r_rotor_iron", "r_magnet", "r_rotor", "r_gap", "r_bore", "r_yoke")


@dataclass(frozen=True)
class MotorGeometry:
    """Quarter of an interior-permanent-magnet motor, all lengths in meters.

    Radial layout from the inside out: rotor core (``r_shaft``..``r_rotor_iron``),
    magnet band (..``r_magnet``), design band (..``r_rotor``), air gap containing
    the evaluation circle ``r_gap`` (..``r_bore``), stator yoke (..``r_yoke``).
    The parts of the magnet band not occupied by magnets are filled with
    ``pocket_fill`` (air by default, i.e. flux-barrier pockets).
    """

    r_shaft: float = 0.015
    r_rotor_iron: float = 0.040
    r_magnet: float = 0.046
    r_rotor: float = 0.050
    r_gap: float = 0.0525
    r_bore: float = 0.055
    r_yoke: float = 0.080
    magnet_centers_deg: Tuple[float, ...] = (22.5, 67.5)
    magnet_span_deg: float = 35.0
    magnetization: float = 9.0e5
    pocket_fill: int = AIR
    n_slots: int = 0
    slot_depth: float = 0.01
    slot_opening: float = 0.5

    def validate(self):
        radii = [getattr(self, k) for k in _RADII]
        if not all(math.isfinite(r) for r in radii) or radii[0] < 0:
            raise MeshError("geometry radii must be finite and nonnegative")
        for a, b in zip(_RADII, _RADII[1:]):
            if not getattr(self, b) > getattr(self, a):
                raise MeshError(f"{b} must exceed {a} (radii must increase strictly)")
        half = 0.5 * self.magnet_span_deg
        for c in self.magnet_centers_deg:
            if c - half < 0 or c + half > 90:
                raise MeshError("magnet_span_deg: magnet leaves the quarter sector")
        if self.pocket_fill not in (AIR, IRON):
            raise MeshError("pocket_fill must be AIR or IRON")
        if self.n_slots < 0 or (self.n_slots and not 0 < self.slot_depth < self.r_yoke - self.r_bore):
            raise MeshError("slot_depth must lie inside the stator")
        if not 0 < self.slot_opening < 1:
            raise MeshError("slot_opening must lie in (0, 1)")

    @property
    def radii(self):
        return tuple(getattr(self, k) for k in _RADII)


def _band_rows(width, h, name):
    n = int(math.floor(width / h + 0.5))
    if n < 1:
        raise MeshError(f"h={h:g} too large: band '{name}' of width {width:g} gets no element row")
    return n


def _ring_mesh(radii_rows, n_theta, tag_fn):
    """Structured quarter-annulus: node rings at given radii, quads split in two."""
    radii = np.asarray(radii_rows, dtype=float)
    theta = np.linspace(0.0, 0.5 * math.pi, n_theta + 1)
    theta[-1] = 0.5 * math.pi
    c, s = np.cos(theta), np.sin(theta)
    c[-1], s[-1] = 0.0, 1.0
    nodes = np.stack([np.outer(radii, c).ravel(), np.outer(radii, s).ravel()], axis=1)
    nr = len(radii) - 1
    idx = np.arange(len(radii) * (n_theta + 1)).reshape(len(radii), n_theta + 1)
    tris, tags = [], []
    for i in range(nr):
        rm = 0.5 * (radii[i] + radii[i + 1])
        for j in range(n_theta):
            a, b = idx[i, j], idx[i, j + 1]
            cc, d = idx[i + 1, j + 1], idx[i + 1, j]
            tm = 0.5 * (theta[j] + theta[j + 1])
            # alternate diagonals so the band pattern is symmetric about 45 deg
            if (i + j) % 2 == 0:
                quad = [(a, d, cc), (a, cc, b)]
            else:
                quad = [(a, d, b), (b, d, cc)]
            tag = tag_fn(rm, tm)
            tris.extend(quad)
            tags.extend([tag, tag])
    bnd = []
    bnd += [(idx[0, j], idx[0, j + 1]) for j in range(n_theta)]
    bnd += [(idx[nr, j], idx[nr, j + 1]) for j in range(n_theta)]
    bnd += [(idx[i, 0], idx[i + 1, 0]) for i in range(nr)]
    bnd += [(idx[i, n_theta], idx[i + 1, n_theta]) for i in range(nr)]
    return nodes, np.array(tris), np.array(tags), np.array(bnd)


def generate_motor_mesh(geom: MotorGeometry = MotorGeometry(), h: float = 0.002) -> Mesh:
    """Structured mesh of one motor quarter (theta in [0, pi/2]).

    Rows follow the radial bands; the angular count is shared by all rings,
    rounded up to a multiple of 18 so 5-degree magnet edges fall on mesh lines.
    Every edge of the quarter boundary carries the Dirichlet marker.
    """
    geom.validate()
    if not (h > 0 and math.isfinite(h)):
        raise MeshError("h must be positive")
    r = geom.radii
    names = ("rotor core", "magnet band", "design band", "air gap", "air gap", "stator")
    rows = [r[0]]
    bands = [(r[0], r[1]), (r[1], r[2]), (r[2], r[3]), (r[3], r[5]), (r[5], r[6])]
    for k, (a, b) in enumerate(bands):
        n = _band_rows(b - a, h, names[k])
        if k == 3 and n % 2 == 0:
            n += 1  # keep the evaluation circle off a node ring
        rows.extend(np.linspace(a, b, n + 1)[1:].tolist())
    n_theta = int(math.ceil(0.5 * math.pi * r[6] / h))
    n_theta = max(18, 18 * int(math.ceil(n_theta / 18)))

    centers = [math.radians(c) for c in geom.magnet_centers_deg]
    half = math.radians(0.5 * geom.magnet_span_deg)
    slot_pitch = 0.5 * math.pi / geom.n_slots if geom.n_slots else None

    def tag_fn(rm, tm):
        if rm < r[1]:
            return IRON
        if rm < r[2]:
            for k, c in enumerate(centers):
                if abs(tm - c) < half:
                    return MAGNET_BASE + k
            return geom.pocket_fill
        if rm < r[3]:
            return DESIGN
        if rm < r[5]:
            return AIR
        if slot_pitch and rm < r[5] + geom.slot_depth:
            frac = (tm / slot_pitch) % 1.0
            if abs(frac - 0.5) < 0.5 * geom.slot_opening:
                return AIR
        return IRON

    nodes, tris, tags, bnd = _ring_mesh(rows, n_theta, tag_fn)
    magnets = {}
    for k, c in enumerate(centers):
        sign = 1.0 if k % 2 == 0 else -1.0
        magnets[MAGNET_BASE + k] = (sign * geom.magnetization * math.cos(c),
                                    sign * geom.magnetization * math.sin(c))
    return Mesh(nodes, tris, tags, bnd, np.full(len(bnd), DIRICHLET), magnets)


def annulus_mesh(radii, h: float, tags=None) -> Mesh:
    """Quarter annulus with one band per consecutive radius pair (generic test domain)."""
    radii = [float(x) for x in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])) or radii[0] < 0:
        raise MeshError("radii must increase strictly")
    if not h > 0:
        raise MeshError("h must be positive")
    rows = [radii[0]]
    for k, (a, b) in enumerate(zip(radii, radii[1:])):
        n = _band_rows(b - a, h, f"band {k}")
        rows.extend(np.linspace(a, b, n + 1)[1:].tolist())
    band_tags = list(tags) if tags is not None else [AIR] * (len(radii) - 1)
    n_theta = max(2, int(math.ceil(0.5 * math.pi * radii[-1] / h)))

    def tag_fn(rm, tm):
        return band_tags[int(np.searchsorted(radii, rm)) - 1]

    nodes, tris, tg, bnd = _ring_mesh(rows, n_theta, tag_fn)
    return Mesh(nodes, tris, tg, bnd, np.full(len(bnd), DIRICHLET))


def rectangle_mesh(nx: int, ny: int, width: float = 1.0, height: float = 1.0,
                   origin=(0.0, 0.0), tag: int = AIR) -> Mesh:
    """Uniform right-triangle grid of a rectangle, all boundary edges Dirichlet."""
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be positive")
    x = origin[0] + np.linspace(0.0, width, nx + 1)
    y = origin[1] + np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(x, y)
    nodes = np.stack([X.ravel(), Y.ravel()], axis=1)
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, 1:].ravel(), idx[1:, :-1].ravel()
    tris = np.stack([np.stack([a, b, c], 1), np.stack([a, c, d], 1)], axis=1).reshape(-1, 3)
    bnd = np.concatenate([
        np.stack([idx[0, :-1], idx[0, 1:]], 1), np.stack([idx[-1, :-1], idx[-1, 1:]], 1),
        np.stack([idx[:-1, 0], idx[1:, 0]], 1), np.stack([idx[:-1, -1], idx[1:, -1]], 1),
    ])
    return Mesh(nodes, tris, np.full(len(tris), tag), bnd, np.full(len(bnd), DIRICHLET))


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------

def _content_lines(stream: TextIO) -> Iterable[Tuple[int, list]]:
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def load_mesh(stream: TextIO) -> Mesh:
    """Parse the ``mesh2d 1`` text format (see README) and validate the result."""
    lines = _content_lines(stream)

    def take(expected=None):
        try:
            lineno, tok = next(lines)
        except StopIteration:
            raise MeshError("unexpected end of file") from None
        if expected is not None and (len(tok) != 2 or tok[0] != expected):
            raise MeshError(f"expected '{expected} <count>'", lineno)
        return lineno, tok

    def count(tok, lineno):
        try:
            n = int(tok[1])
        except ValueError:
            raise MeshError(f"bad count {tok[1]!r}", lineno) from None
        if n < 0:
            raise MeshError("negative count", lineno)
        return n

    def rows(n, width, conv):
        out = []
        for _ in range(n):
            lineno, tok = take()
            if len(tok) != width:
                raise MeshError(f"expected {width} fields, got {len(tok)}", lineno)
            try:
                out.append([c(t) for c, t in zip(conv, tok)])
            except ValueError as exc:
                raise MeshError(str(exc), lineno) from None
        return out

    lineno, tok = take()
    if tok != ["mesh2d", "1"]:
        raise MeshError("missing header 'mesh2d 1'", lineno)
    lineno, tok = take("nodes")
    nodes = rows(count(tok, lineno), 2, (float, float))
    lineno, tok = take("triangles")
    tris = rows(count(tok, lineno), 4, (int, int, int, int))
    lineno, tok = take("magnets")
    mags = rows(count(tok, lineno), 3, (int, float, float))
    lineno, tok = take("boundary")
    bnd = rows(count(tok, lineno), 3, (int, int, int))
    try:
        lineno, _ = next(lines)
        raise MeshError("trailing content after boundary section", lineno)
    except StopIteration:
        pass
    tri = np.array(tris, dtype=np.int64).reshape(-1, 4)
    b = np.array(bnd, dtype=np.int64).reshape(-1, 3)
    return Mesh(np.array(nodes, dtype=float).reshape(-1, 2), tri[:, :3], tri[:, 3],
                b[:, :2], b[:, 2], {t: (mx, my) for t, mx, my in mags})


def save_mesh(mesh: Mesh, stream: TextIO) -> None:
    """Write the canonical text form; `load_mesh` inverts it exactly."""
    w = stream.write
    w("mesh2d 1\n")
    w(f"nodes {mesh.n_nodes}\n")
    for x, y in mesh.nodes.tolist():
        w(f"{x!r} {y!r}\n")
    w(f"triangles {mesh.n_elements}\n")
    for (i, j, k), t in zip(mesh.triangles.tolist(), mesh.tags.tolist()):
        w(f"{i} {j} {k} {t}\n")
    w(f"magnets {len(mesh.magnets)}\n")
    for t, (mx, my) in mesh.magnets.items():
        w(f"{t} {mx!r} {my!r}\n")
    w(f"boundary {len(mesh.boundary)}\n")
    for (i, j), mk in zip(mesh.boundary.tolist(), mesh.markers.tolist()):
        w(f"{i} {j} {mk}\n")
