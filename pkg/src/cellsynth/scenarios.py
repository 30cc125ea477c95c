"""Reference environments: an L-shaped corridor, a two-obstacle floor and a ring.

Vertex ids are laid out row-major on a coordinate grid so deformations can
address them directly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geometry import Environment
from .simulate import DeformationMap
from .transversal import LinearSystem, double_integrator, single_integrator


def _grid(xs, ys) -> np.ndarray:
    return np.array([[x, y] for y in ys for x in xs], dtype=float)


def _rect(i, j, nx):
    """Vertex ids of grid rectangle (i, j), counterclockwise."""
    a = j * nx + i
    return [a, a + 1, a + 1 + nx, a + nx]


def _split(ids):
    a, b, c, d = ids
    return [[a, b, c], [a, c, d]]


@dataclass(frozen=True)
class Scenario:
    name: str
    env: Environment
    system: LinearSystem
    c_b: tuple
    c_V: tuple
    starts: tuple
    t_max: float
    dt: float = 1e-3

    def start_state(self, k: int) -> np.ndarray:
        x = np.zeros(self.system.n_x)
        x[list(self.system.pos_idx)] = self.starts[k]
        return x


def l_shape() -> Environment:
    """Eight cells: three squares split into triangle pairs plus two squares."""
    xs, ys = (0, 10, 20, 30), (0, 10, 20, 30)
    V = _grid(xs, ys)
    n = len(xs)
    cells = [_rect(0, 0, n)] + _split(_rect(1, 0, n)) + [_rect(2, 0, n)]
    cells += _split(_rect(0, 1, n)) + _split(_rect(0, 2, n))
    used = sorted({v for c in cells for v in c})
    remap = {old: new for new, old in enumerate(used)}
    cells = [[remap[v] for v in c] for c in cells]
    return Environment.from_ids(V[used], cells, goal=V[used][remap[12]])


FLOOR_XS = (0, 15, 25, 35, 45, 60)
FLOOR_YS = (0, 15, 25, 40)
FLOOR_VERTICES = _grid(FLOOR_XS, FLOOR_YS)


def floor() -> Environment:
    """Sixteen cells around two rectangular obstacles; the door is at (60, 25)."""
    n = len(FLOOR_XS)
    V = _grid(FLOOR_XS, FLOOR_YS)
    holes = {(1, 1), (3, 1)}
    split = {(0, 0), (2, 1), (2, 2)}
    cells = []
    for j in range(len(FLOOR_YS) - 1):
        for i in range(n - 1):
            if (i, j) in holes:
                continue
            ids = _rect(i, j, n)
            cells += _split(ids) if (i, j) in split else [ids]
    return Environment.from_ids(V, cells, goal=V[2 * n + 5])


FLOOR_STARTS = ((30.0, 1.0), (1.0, 30.0), (40.0, 39.0))


def floor_deformation() -> DeformationMap:
    """First obstacle moved up by 2 m, top and bottom walls bulged out by 1.5 m."""
    moves = {v: FLOOR_VERTICES[v] + (0.0, 2.0) for v in (7, 8, 13, 14)}
    for v in (1, 2, 3):
        moves[v] = FLOOR_VERTICES[v] + (0.0, -1.5)
    for v in (19, 20, 21):
        moves[v] = FLOOR_VERTICES[v] + (0.0, 1.5)
    return DeformationMap(moves)


RING_XS = (0, 20, 30, 50)
RING_CYCLE_XY = ((0, 2), (0, 1), (0, 0), (1, 0), (2, 0), (2, 1), (2, 2), (1, 2))


def ring() -> Environment:
    """Eight rectangles around a square obstacle, patrolled counterclockwise."""
    n = len(RING_XS)
    V = _grid(RING_XS, RING_XS)
    cells, ids = [], {}
    for j in range(3):
        for i in range(3):
            if (i, j) == (1, 1):
                continue
            ids[(i, j)] = len(cells)
            cells.append(_rect(i, j, n))
    cycle = tuple(ids[ij] for ij in RING_CYCLE_XY)
    return Environment.from_ids(V, cells, patrol=cycle)


RING_HOLE = (5, 6, 10, 9)


def ring_enlarged(env: Environment | None = None, factor: float = 1.3) -> DeformationMap:
    env = ring() if env is None else env
    return DeformationMap.scale(env, RING_HOLE, factor, center=(25.0, 25.0))


def ring_rotated(env: Environment | None = None, angle: float = np.pi / 4) -> DeformationMap:
    env = ring() if env is None else env
    return DeformationMap.rotate(env, RING_HOLE, angle, center=(25.0, 25.0))


def floor_scenario() -> Scenario:
    return Scenario("floor", floor(), single_integrator(2, u_max=10.0), (0.5,), (0.5,),
                    FLOOR_STARTS, t_max=200.0)


def ring_scenario() -> Scenario:
    return Scenario("ring", ring(), double_integrator(2, v_max=22.0, u_max=60.0), (1.0, 1.0),
                    (1.0, 1.0), ((10.0, 40.0),), t_max=400.0)


def l_shape_scenario() -> Scenario:
    return Scenario("l_shape", l_shape(), single_integrator(2, u_max=10.0), (0.5,), (0.5,),
                    ((25.0, 5.0), (5.0, 5.0)), t_max=100.0)


SCENARIOS = {"floor": floor_scenario, "ring": ring_scenario, "l_shape": l_shape_scenario}


def export(name: str, directory) -> dict:
    """Write environment, deformation and config JSON files for a scenario."""
    from pathlib import Path

    from . import io

    sc = SCENARIOS[name]()
    d = Path(directory)
    io.save_environment(sc.env, d / "environment.json")
    if sc.system.n_x == sc.system.d:
        system = {"order": 1, "u_max": float(sc.system.b_u[0])}
    else:
        system = {"order": 2, "v_max": float(sc.system.b_dyn[0]), "u_max": float(sc.system.b_u[0])}
    cfg = {"environment": "environment.json", "system": system, "c_b": list(sc.c_b),
           "c_V": list(sc.c_V), "x0": [list(p) for p in sc.starts], "dt": sc.dt,
           "t_max": sc.t_max, "out": "out"}
    deformations = {"floor": [("deformation.json", floor_deformation())],
                    "ring": [("enlarged.json", ring_enlarged(sc.env)),
                             ("rotated.json", ring_rotated(sc.env))]}.get(name, [])
    for fname, dm in deformations:
        io.save_deformation(dm, d / fname)
    if deformations:
        cfg["deformation"] = deformations[0][0]
    if sc.env.patrol:
        cfg["patrol_cycles"] = 6
    io.atomic_write(d / "config.json", json.dumps(cfg, indent=2) + "\n")
    return cfg
