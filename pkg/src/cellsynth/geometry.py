"""Convex cells, polygonal environments and their validation.

Cells are 2D convex polygons given by counterclockwise vertex lists.  Each
cell carries both views of the polytope: the vertex list and the half-space
rows ``a . x <= b`` (one per edge, edge ``k`` runs from vertex ``k`` to
vertex ``k + 1``).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

TIGHT_TOL = 1e-9
ROUNDTRIP_TOL = 1e-8


class GeometryError(ValueError):
    """Raised for malformed or degenerate geometric input."""


@dataclass(frozen=True)
class HalfSpace:
    """The closed half-space ``normal . x <= offset`` with a unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if not np.all(np.isfinite(n)) or not np.isfinite(self.offset):
            raise GeometryError("half-space entries must be finite")
        norm = np.linalg.norm(n)
        if norm < 1e-14:
            raise GeometryError("half-space normal is zero")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "offset", float(self.offset) / norm)

    def evaluate(self, x):
        """Signed slack ``offset - normal . x`` (nonnegative inside)."""
        return self.offset - np.asarray(x, dtype=float) @ self.normal


def _cross2(u, v):
    return u[0] * v[1] - u[1] * v[0]


def signed_area(vertices) -> float:
    """Shoelace signed area; positive for counterclockwise polygons."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_centroid(vertices) -> np.ndarray:
    v = np.asarray(vertices, dtype=float)
    a = signed_area(v)
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    return np.array([np.sum((x + xn) * cross), np.sum((y + yn) * cross)]) / (6.0 * a)


def point_in_polygon(point, polygon) -> bool:
    """Even-odd rule test; points on the boundary may go either way."""
    px, py = float(point[0]), float(point[1])
    poly = np.asarray(polygon, dtype=float)
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > py) != (y2 > py):
            xc = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if xc > px:
                inside = not inside
    return inside


def halfspaces_from_vertices(vertices) -> list[HalfSpace]:
    """Outward unit-normal half-spaces of a convex counterclockwise polygon.

    Half-space ``k`` supports the edge from vertex ``k`` to vertex ``k+1``.

    Raises
    ------
    GeometryError
        If fewer than three vertices are given, if consecutive vertices are
        collinear or coincident, or if the order is not convex and
        counterclockwise.
    """
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2:
        raise GeometryError("only 2D vertex lists are supported")
    n = len(v)
    if n < 3:
        raise GeometryError(f"need at least 3 vertices, got {n}")
    scale = max(1.0, float(np.max(np.abs(v))))
    for k in range(n):
        e1 = v[(k + 1) % n] - v[k]
        e2 = v[(k + 2) % n] - v[(k + 1) % n]
        if np.linalg.norm(e1) <= TIGHT_TOL * scale:
            raise GeometryError(f"coincident vertices at index {k}")
        c = _cross2(e1, e2)
        if abs(c) <= TIGHT_TOL * scale * scale:
            raise GeometryError(f"collinear vertices at index {(k + 1) % n}")
        if c < 0:
            raise GeometryError("vertices are not convex counterclockwise")
    # a star-shaped but self-intersecting loop passes the turn test; winding must be 1
    turning = 0.0
    for k in range(n):
        e1 = v[(k + 1) % n] - v[k]
        e2 = v[(k + 2) % n] - v[(k + 1) % n]
        turning += np.arctan2(_cross2(e1, e2), float(np.dot(e1, e2)))
    if abs(turning - 2 * np.pi) > 1e-6:
        raise GeometryError("vertex loop winds more than once")
    out = []
    for k in range(n):
        p, q = v[k], v[(k + 1) % n]
        e = q - p
        normal = np.array([e[1], -e[0]])
        out.append(HalfSpace(normal, float(normal @ p)))
    return out


def halfspace_matrix(halfspaces) -> tuple[np.ndarray, np.ndarray]:
    A = np.array([h.normal for h in halfspaces])
    b = np.array([h.offset for h in halfspaces])
    return A, b


def vertices_from_halfspaces(halfspaces) -> np.ndarray:
    """Intersect consecutive edge lines to recover the vertex loop (2D)."""
    n = len(halfspaces)
    verts = []
    for k in range(n):
        h_prev, h = halfspaces[k - 1], halfspaces[k]
        M = np.vstack([h_prev.normal, h.normal])
        verts.append(np.linalg.solve(M, [h_prev.offset, h.offset]))
    return np.array(verts)


@dataclass(frozen=True)
class ConvexCell:
    """A convex polygonal cell with its landmarks.

    ``landmarks`` is the ``d x n_l`` matrix ``Y`` whose columns are landmark
    positions; by default the cell vertices in counterclockwise order.
    """

    id: int
    vertices: np.ndarray
    vertex_ids: tuple = ()
    landmarks: np.ndarray | None = None
    landmark_ids: tuple = ()
    halfspaces: tuple = field(default=(), compare=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "halfspaces", tuple(halfspaces_from_vertices(v)))
        if not self.vertex_ids:
            object.__setattr__(self, "vertex_ids", tuple(range(len(v))))
        if self.landmarks is None:
            Y = v.T.copy()
            if not self.landmark_ids:
                object.__setattr__(self, "landmark_ids", tuple(self.vertex_ids))
        else:
            Y = np.array(self.landmarks, dtype=float)
            if Y.ndim != 2 or Y.shape[0] != v.shape[1]:
                raise GeometryError("landmarks must be a d x n_l matrix")
        Y.setflags(write=False)
        object.__setattr__(self, "landmarks", Y)
        A = np.array([h.normal for h in self.halfspaces])
        b = np.array([h.offset for h in self.halfspaces])
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "_A", A)
        object.__setattr__(self, "_b", b)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_faces(self) -> int:
        return len(self.vertices)

    @property
    def A(self) -> np.ndarray:
        return self._A

    @property
    def b(self) -> np.ndarray:
        return self._b

    @property
    def centroid(self) -> np.ndarray:
        return polygon_centroid(self.vertices)

    @property
    def area(self) -> float:
        return signed_area(self.vertices)

    def face_vertices(self, k: int) -> np.ndarray:
        n = self.n_faces
        return self.vertices[[k % n, (k + 1) % n]]

    def face_vertex_ids(self, k: int) -> tuple:
        n = self.n_faces
        return (self.vertex_ids[k % n], self.vertex_ids[(k + 1) % n])

    def contains(self, point, tol: float = TIGHT_TOL) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(self.A @ p <= self.b + tol))

    def slack(self, point) -> np.ndarray:
        return self.b - self.A @ np.asarray(point, dtype=float)


@dataclass(frozen=True)
class ExitSpec:
    """Affine Lyapunov data ``V(x) = z . x + b_V`` for one cell.

    ``kind`` is ``"face"`` (exit through edge ``index``) or ``"point"``
    (stabilize at vertex ``index``).
    """

    z: np.ndarray
    b_V: float
    kind: str
    index: int
    exit_vertices: np.ndarray

    def value(self, x) -> float:
        return float(np.asarray(x, dtype=float) @ self.z + self.b_V)


def _embed(z_pos, system):
    if system is None:
        return np.asarray(z_pos, dtype=float)
    return system.P_pos.T @ z_pos


def exit_spec(cell: ConvexCell, exit, system=None) -> ExitSpec:
    """Build ``V`` for a face exit or a goal-vertex exit.

    Parameters
    ----------
    cell : ConvexCell
    exit : tuple
        ``("face", k)`` or ``("point", k)`` where ``k`` indexes the cell's
        edges or vertices.  A bare integer means a face index.
    system : LinearSystem, optional
        When given, ``z`` is embedded into the full state (zero on the
        non-position coordinates); otherwise ``z`` lives in position space.
    """
    kind, k = ("face", exit) if isinstance(exit, (int, np.integer)) else exit
    n = cell.n_faces
    if not 0 <= k < n:
        raise GeometryError(f"exit index {k} out of range for cell {cell.id} with {n} faces")
    if kind == "face":
        hs = cell.halfspaces[k]
        z_pos = -hs.normal
        b_V = hs.offset
        ev = cell.face_vertices(k)
    elif kind == "point":
        g = cell.vertices[k]
        e_next = cell.vertices[(k + 1) % n] - g
        e_prev = cell.vertices[(k - 1) % n] - g
        # interior angle bisector: positive on every other vertex of a convex cell
        bis = e_next / np.linalg.norm(e_next) + e_prev / np.linalg.norm(e_prev)
        z_pos = bis / np.linalg.norm(bis)
        b_V = -float(z_pos @ g)
        ev = g[None, :]
    else:
        raise GeometryError(f"unknown exit kind {kind!r}")
    return ExitSpec(_embed(z_pos, system), float(b_V), kind, int(k), ev.copy())


def lyapunov_from_vertices_2d(v0, v1, interior=None) -> ExitSpec:
    """Determinant-form ``V(p) = det([v1 - v0, p - v0])``.

    This is ``det([v1 - v0, p])`` shifted by a constant so that ``V`` is zero
    on the line through ``v0`` and ``v1``.  The caller orders ``v0, v1`` so
    that ``V`` is positive inside the cell; if ``interior`` is given the sign
    is checked there.
    """
    v0 = np.asarray(v0, dtype=float)
    v1 = np.asarray(v1, dtype=float)
    e = v1 - v0
    if np.linalg.norm(e) <= TIGHT_TOL * max(1.0, np.max(np.abs(v0))):
        raise GeometryError("coincident points")
    # det([e, p]) = e0*p1 - e1*p0
    z = np.array([-e[1], e[0]])
    b_V = -float(z @ v0)
    if interior is not None and float(z @ np.asarray(interior) + b_V) <= 0:
        raise GeometryError("vertex order gives V <= 0 at the interior probe; swap v0, v1")
    return ExitSpec(z, b_V, "face", -1, np.vstack([v0, v1]))


def split_cell_at_interior_goal(cell: ConvexCell, goal, first_id: int = 0,
                                goal_vertex_id=None) -> list[ConvexCell]:
    """Fan-triangulate ``cell`` from an interior goal point.

    Triangle ``k`` is ``(goal, v_k, v_{k+1})``.  New cells get ids
    ``first_id, first_id + 1, ...`` and landmarks equal to their vertices.
    """
    g = np.asarray(goal, dtype=float)
    slack = cell.slack(g)
    scale = max(1.0, float(np.max(np.abs(cell.vertices))))
    if np.any(slack <= TIGHT_TOL * scale):
        raise GeometryError(
            f"goal {g.tolist()} is not strictly inside cell {cell.id}; "
            "use the vertex or face directly"
        )
    gid = goal_vertex_id if goal_vertex_id is not None else -1
    out = []
    n = cell.n_faces
    for k in range(n):
        verts = np.vstack([g, cell.vertices[k], cell.vertices[(k + 1) % n]])
        ids = (gid, cell.vertex_ids[k], cell.vertex_ids[(k + 1) % n])
        out.append(ConvexCell(first_id + k, verts, vertex_ids=ids))
    return out


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    def add(self, kind: str, cells, message: str):
        self.violations.append({"kind": kind, "cells": sorted(cells), "message": message})

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def to_dict(self):
        return {"ok": self.ok, "violations": list(self.violations)}


@dataclass(frozen=True)
class Environment:
    """Polygon-with-holes world and its convex decomposition.

    ``vertices`` is the shared vertex table; cells, holes and the outer
    boundary refer to it by index so a deformation moves every user of a
    vertex at once.
    """

    vertices: np.ndarray
    cells: tuple
    outer: tuple = ()
    holes: tuple = ()
    goal: np.ndarray | None = None
    patrol: tuple = ()

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "cells", tuple(self.cells))
        if not self.outer and self.cells:
            outer, holes = boundary_loops(self.cells, v)
            object.__setattr__(self, "outer", tuple(outer))
            if not self.holes:
                object.__setattr__(self, "holes", tuple(tuple(h) for h in holes))
        object.__setattr__(self, "holes", tuple(tuple(h) for h in self.holes))
        if self.goal is not None:
            object.__setattr__(self, "goal", np.asarray(self.goal, dtype=float))

    @classmethod
    def from_ids(cls, vertices, cell_vertex_ids, cell_ids=None, landmark_ids=None, **kw):
        vertices = np.asarray(vertices, dtype=float)
        cells = []
        for i, vids in enumerate(cell_vertex_ids):
            cid = cell_ids[i] if cell_ids is not None else i
            lids = None if landmark_ids is None else landmark_ids[i]
            cells.append(make_cell(cid, vertices, vids, lids))
        return cls(vertices, tuple(cells), **kw)

    @property
    def cell_ids(self) -> list:
        return [c.id for c in self.cells]

    def cell(self, cid) -> ConvexCell:
        for c in self.cells:
            if c.id == cid:
                return c
        raise KeyError(f"no cell with id {cid}")

    @property
    def outer_polygon(self) -> np.ndarray:
        return self.vertices[list(self.outer)]

    @property
    def hole_polygons(self) -> list:
        return [self.vertices[list(h)] for h in self.holes]

    def adjacency(self) -> dict:
        """Map ``frozenset({i, j}) -> (face index in i, face index in j)``."""
        return adjacency_faces(self.cells)

    def adjacency_pairs(self) -> set:
        return {tuple(sorted(p)) for p in self.adjacency()}

    def locate(self, point, tol: float = TIGHT_TOL):
        """Ids of all cells containing ``point`` (within ``tol``)."""
        return [c.id for c in self.cells if c.contains(point, tol)]

    def in_free_space(self, point) -> bool:
        if not point_in_polygon(point, self.outer_polygon):
            return False
        return not any(point_in_polygon(point, h) for h in self.hole_polygons)

    def with_vertices(self, vertices) -> "Environment":
        """Same topology with moved vertices (landmarks follow their ids)."""
        vertices = np.asarray(vertices, dtype=float)
        cells = [make_cell(c.id, vertices, c.vertex_ids, c.landmark_ids) for c in self.cells]
        goal = self.goal
        if goal is not None:
            hit = np.where(np.linalg.norm(self.vertices - goal, axis=1) <= TIGHT_TOL)[0]
            if len(hit):
                goal = vertices[hit[0]]
        return Environment(vertices, tuple(cells), self.outer, self.holes, goal, self.patrol)


def make_cell(cid, vertices, vertex_ids, landmark_ids=None) -> ConvexCell:
    vertex_ids = tuple(int(i) for i in vertex_ids)
    verts = np.asarray(vertices, dtype=float)[list(vertex_ids)]
    if landmark_ids is None:
        landmark_ids = vertex_ids
    landmark_ids = tuple(int(i) for i in landmark_ids)
    Y = np.asarray(vertices, dtype=float)[list(landmark_ids)].T
    return ConvexCell(cid, verts, vertex_ids=vertex_ids, landmarks=Y, landmark_ids=landmark_ids)


def _edge_key(p, q):
    return tuple(sorted([tuple(np.round(p, 9)), tuple(np.round(q, 9))]))


def adjacency_faces(cells) -> dict:
    """Cells sharing a full edge (same endpoints) are adjacent."""
    owners = {}
    for c in cells:
        for k in range(c.n_faces):
            p, q = c.face_vertices(k)
            owners.setdefault(_edge_key(p, q), []).append((c.id, k))
    adj = {}
    for lst in owners.values():
        for (i, fi), (j, fj) in itertools.combinations(lst, 2):
            if i == j:
                continue
            adj[frozenset((i, j))] = (fi, fj) if i < j else (fj, fi)
    return adj


def boundary_loops(cells, vertices):
    """Chain unshared directed edges into loops; the largest is the outer one.

    Returns ``(outer_ids, hole_id_lists)`` with outer counterclockwise.
    """
    directed = {}
    count = {}
    for c in cells:
        n = c.n_faces
        for k in range(n):
            a, b = c.vertex_ids[k], c.vertex_ids[(k + 1) % n]
            directed[(a, b)] = True
            key = frozenset((a, b))
            count[key] = count.get(key, 0) + 1
    nxt = {}
    for (a, b) in directed:
        if count[frozenset((a, b))] == 1:
            nxt[a] = b
    loops = []
    seen = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        cur = nxt[start]
        while cur != start and cur not in seen:
            loop.append(cur)
            seen.add(cur)
            cur = nxt.get(cur, start)
        loops.append(loop)
    if not loops:
        return [], []
    areas = [signed_area(np.asarray(vertices)[lp]) for lp in loops]
    order = np.argsort([-abs(a) for a in areas])
    outer = loops[order[0]]
    holes = [loops[i] for i in order[1:]]
    return outer, holes


def _sample_points(cell: ConvexCell, rng, n_random: int = 16) -> np.ndarray:
    c = cell.centroid
    pts = [c]
    pts.extend(0.5 * (c + v) for v in cell.vertices)
    w = rng.dirichlet(np.ones(cell.n_faces), size=n_random)
    pts.extend(w @ cell.vertices)
    return np.array(pts)


def validate_environment(env: Environment, h_probe: float | None = None, seed: int = 0,
                         tol: float = TIGHT_TOL) -> ValidationReport:
    """Check cell invariants, pairwise overlap, coverage and adjacency.

    Coverage is tested on a grid with spacing ``h_probe`` (default 5% of the
    bounding-box diagonal); probe points in free space must lie in a cell.
    """
    rep = ValidationReport()
    rng = np.random.default_rng(seed)
    ids = [c.id for c in env.cells]
    if len(set(ids)) != len(ids):
        rep.add("duplicate_id", [i for i in set(ids) if ids.count(i) > 1], "duplicate cell ids")
    for c in env.cells:
        A, b = c.A, c.b
        scale = max(1.0, float(np.max(np.abs(c.vertices))))
        res = A @ c.vertices.T - b[:, None]
        if np.any(res > tol * scale):
            rep.add("vertex_outside", [c.id], "a vertex violates a cell half-space")
        for k in range(c.n_faces):
            tight = np.abs(res[k]) <= tol * scale
            expected = np.zeros(c.n_faces, dtype=bool)
            expected[[k, (k + 1) % c.n_faces]] = True
            if not np.array_equal(tight, expected):
                rep.add("face_not_tight", [c.id], f"face {k} is not tight on exactly its vertices")
        if c.area <= 0:
            rep.add("empty", [c.id], "cell has empty interior")
    for ci, cj in itertools.combinations(env.cells, 2):
        scale = max(1.0, float(np.max(np.abs(ci.vertices))), float(np.max(np.abs(cj.vertices))))
        margin = 1e-7 * scale
        overlap = False
        for a, bcell in ((ci, cj), (cj, ci)):
            pts = _sample_points(a, rng)
            if np.any(np.all(bcell.A @ pts.T < bcell.b[:, None] - margin, axis=0)):
                overlap = True
                break
        if overlap:
            rep.add("overlap", [ci.id, cj.id], f"cells {ci.id} and {cj.id} overlap")
    _check_partial_contacts(env, rep)
    if env.outer:
        lo = env.vertices.min(axis=0)
        hi = env.vertices.max(axis=0)
        if h_probe is None:
            h_probe = 0.05 * float(np.linalg.norm(hi - lo))
        xs = np.arange(lo[0] + 0.5 * h_probe, hi[0], h_probe)
        ys = np.arange(lo[1] + 0.5 * h_probe, hi[1], h_probe)
        A_all = [(c.A, c.b) for c in env.cells]
        gaps = []
        for x in xs:
            for y in ys:
                p = np.array([x, y])
                if not env.in_free_space(p):
                    continue
                if not any(np.all(A @ p <= b + 1e-9) for A, b in A_all):
                    gaps.append([float(x), float(y)])
        if gaps:
            near = set()
            for g in gaps:
                d = [np.linalg.norm(c.centroid - g) for c in env.cells]
                near.add(env.cells[int(np.argmin(d))].id)
            rep.add("coverage_gap", near,
                    f"{len(gaps)} free-space probe points are in no cell, e.g. {gaps[0]}")
    return rep


def _check_partial_contacts(env, rep):
    """Flag collinear edges of different cells that overlap without coinciding."""
    edges = []
    for c in env.cells:
        for k in range(c.n_faces):
            p, q = c.face_vertices(k)
            edges.append((c.id, p, q))
    full = {frozenset(p) for p in env.adjacency()}
    for (i, p1, q1), (j, p2, q2) in itertools.combinations(edges, 2):
        if i == j or frozenset((i, j)) in full:
            continue
        e = q1 - p1
        L = np.linalg.norm(e)
        u = e / L
        nrm = np.array([-u[1], u[0]])
        if abs(nrm @ (p2 - p1)) > 1e-9 * max(1.0, L) or abs(nrm @ (q2 - p1)) > 1e-9 * max(1.0, L):
            continue
        s = sorted([u @ (p2 - p1), u @ (q2 - p1)])
        overlap = min(L, s[1]) - max(0.0, s[0])
        if overlap > 1e-9 * max(1.0, L):
            rep.add("partial_adjacency", [i, j],
                    f"cells {i} and {j} touch along part of a face without sharing it")
