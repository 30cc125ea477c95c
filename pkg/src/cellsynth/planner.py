"""Cell graph and exit-edge planning (point stabilization and patrolling)."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .geometry import TIGHT_TOL, Environment, GeometryError, split_cell_at_interior_goal

GOAL = "goal"


class PlanningError(ValueError):
    def __init__(self, message, cells=()):
        super().__init__(message)
        self.cells = list(cells)


@dataclass
class CellGraph:
    nodes: list
    edges: dict  # frozenset({i, j}) -> weight
    goal_node: object = None
    goal: np.ndarray | None = None
    goal_vertex_id: int | None = None

    def neighbors(self, node) -> list:
        out = [(next(iter(e - {node})), w) for e, w in self.edges.items() if node in e]
        return sorted(out, key=lambda t: (t[0] != GOAL, str(t[0]).zfill(12)))


@dataclass
class ExitPlan:
    """Exit of every cell: ``("face", k)`` or ``("point", k)``.

    ``successor`` maps a cell to the cell entered through its exit face
    (absent for goal-vertex exits).
    """

    exits: dict
    successor: dict
    objective: str
    cycle: tuple = ()
    goal: np.ndarray | None = None

    def follow(self, start, max_steps=None):
        """Cells visited from ``start`` by iterating the exit map."""
        path = [start]
        steps = max_steps if max_steps is not None else len(self.exits) + 1
        cur = start
        for _ in range(steps):
            if cur not in self.successor:
                break
            cur = self.successor[cur]
            path.append(cur)
        return path

    def to_dict(self) -> dict:
        exits = {}
        for cid, (kind, k) in sorted(self.exits.items()):
            item = {"kind": kind, "index": int(k)}
            if cid in self.successor:
                item["to"] = int(self.successor[cid])
            exits[str(cid)] = item
        out = {"objective": self.objective, "exits": exits}
        if self.cycle:
            out["cycle"] = [int(c) for c in self.cycle]
        if self.goal is not None:
            out["goal"] = [float(v) for v in self.goal]
        return out


def _goal_vertex(env: Environment, goal):
    d = np.linalg.norm(env.vertices - goal, axis=1)
    scale = max(1.0, float(np.max(np.abs(env.vertices))))
    hit = np.nonzero(d <= TIGHT_TOL * scale)[0]
    return int(hit[0]) if len(hit) else None


def resolve_goal(env: Environment, goal) -> tuple[Environment, int]:
    """Make ``goal`` a vertex of the decomposition.

    A goal interior to a cell splits that cell into a fan of triangles; the
    new cells take ids after the current maximum.  Returns the (possibly
    updated) environment and the goal's vertex id.
    """
    goal = np.asarray(goal, dtype=float)
    vid = _goal_vertex(env, goal)
    if vid is not None:
        return env, vid
    holders = [c for c in env.cells if c.contains(goal)]
    if not holders:
        raise PlanningError(f"goal {goal.tolist()} lies outside the environment")
    cell = holders[0]
    if len(holders) > 1 or np.any(cell.slack(goal) <= TIGHT_TOL * max(1.0, np.max(np.abs(goal)))):
        raise PlanningError(
            f"goal {goal.tolist()} lies on a cell boundary but not at a vertex; "
            "add it as a vertex of the decomposition"
        )
    vid = len(env.vertices)
    vertices = np.vstack([env.vertices, goal])
    first = max(env.cell_ids) + 1
    try:
        fan = split_cell_at_interior_goal(cell, goal, first, vid)
    except GeometryError as exc:
        raise PlanningError(str(exc), [cell.id]) from exc
    from .geometry import make_cell

    fan = [make_cell(c.id, vertices, c.vertex_ids) for c in fan]
    cells = [c for c in env.cells if c.id != cell.id] + fan
    new_env = Environment(vertices, tuple(cells), env.outer, env.holes, goal, env.patrol)
    return new_env, vid


def build_graph(env: Environment, goal=None) -> tuple[CellGraph, Environment]:
    """Abstract graph over cells; a goal adds one extra node.

    Edge weights are centroid distances (centroid-to-goal for goal edges).
    The goal node is linked to every cell having the goal as a vertex.
    """
    goal_vid = None
    if goal is not None:
        env, goal_vid = resolve_goal(env, goal)
        goal = env.vertices[goal_vid]
    nodes = sorted(env.cell_ids)
    edges = {}
    cents = {c.id: c.centroid for c in env.cells}
    for pair in env.adjacency():
        i, j = sorted(pair)
        edges[frozenset((i, j))] = float(np.linalg.norm(cents[i] - cents[j]))
    goal_node = None
    if goal is not None:
        goal_node = GOAL
        nodes.append(GOAL)
        for c in env.cells:
            if goal_vid in c.vertex_ids:
                edges[frozenset((c.id, GOAL))] = float(np.linalg.norm(cents[c.id] - goal))
    return CellGraph(nodes, edges, goal_node, goal, goal_vid), env


def _dijkstra(graph: CellGraph, sources):
    """Shortest distances to ``sources``; parents tie-broken by lowest id."""
    adj = {n: [] for n in graph.nodes}
    for e, w in graph.edges.items():
        a, b = tuple(e)
        adj[a].append((b, w))
        adj[b].append((a, w))
    dist = {s: 0.0 for s in sources}
    parent = {}
    heap = [(0.0, 0, s) for s in sorted(sources, key=str)]
    heapq.heapify(heap)
    done = set()
    while heap:
        dcur, _, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for v, w in adj[u]:
            nd = dcur + w
            if v not in dist or nd < dist[v] - 1e-12:
                dist[v] = nd
                heapq.heappush(heap, (nd, 0 if v == GOAL else 1, v))
    for v in graph.nodes:
        if v in sources or v not in dist:
            continue
        best = None
        for u, w in adj[v]:
            if u in dist and abs(dist[u] + w - dist[v]) <= 1e-9 * max(1.0, dist[v]):
                key = (0, -1) if u == GOAL else (1, u)
                if best is None or key < best[0]:
                    best = (key, u)
        parent[v] = best[1]
    return dist, parent


def _face_toward(env: Environment, i, j) -> int:
    return env.adjacency()[frozenset((i, j))][0 if i < j else 1]


def plan_stabilization(graph: CellGraph, env: Environment) -> ExitPlan:
    """Shortest-path tree toward the goal node (Dijkstra)."""
    if graph.goal_node is None:
        raise PlanningError("graph has no goal node")
    dist, parent = _dijkstra(graph, [graph.goal_node])
    missing = [n for n in graph.nodes if n not in dist]
    if missing:
        raise PlanningError(f"cells {missing} cannot reach the goal", missing)
    exits, succ = {}, {}
    for cid in graph.nodes:
        if cid == GOAL:
            continue
        p = parent[cid]
        if p == GOAL:
            cell = env.cell(cid)
            exits[cid] = ("point", cell.vertex_ids.index(graph.goal_vertex_id))
        else:
            exits[cid] = ("face", _face_toward(env, cid, p))
            succ[cid] = p
    return ExitPlan(exits, succ, "stabilization", (), graph.goal)


def plan_patrol(graph: CellGraph, env: Environment, cycle) -> ExitPlan:
    """Cycle cells exit to their successor; others take the shortest path to the cycle."""
    cycle = [int(c) for c in cycle]
    if len(cycle) < 2:
        raise PlanningError("patrol cycle needs at least two cells")
    if len(set(cycle)) != len(cycle):
        raise PlanningError("patrol cycle repeats a cell")
    for c in cycle:
        if c not in graph.nodes:
            raise PlanningError(f"cell {c} is not in the graph", [c])
    for a, b in zip(cycle, cycle[1:] + cycle[:1]):
        if frozenset((a, b)) not in graph.edges:
            raise PlanningError(f"cycle cells {a} and {b} are not adjacent", [a, b])
    exits, succ = {}, {}
    for a, b in zip(cycle, cycle[1:] + cycle[:1]):
        exits[a] = ("face", _face_toward(env, a, b))
        succ[a] = b
    dist, parent = _dijkstra(graph, cycle)
    missing = [n for n in graph.nodes if n not in dist and n != GOAL]
    if missing:
        raise PlanningError(f"cells {missing} cannot reach the patrol cycle", missing)
    for cid in graph.nodes:
        if cid == GOAL or cid in exits:
            continue
        p = parent[cid]
        exits[cid] = ("face", _face_toward(env, cid, p))
        succ[cid] = p
    return ExitPlan(exits, succ, "patrolling", tuple(cycle))


def plan_from_environment(env: Environment, goal=None, patrol=None):
    """Build the graph and the plan that ``env`` (or the overrides) ask for."""
    goal = env.goal if goal is None and not patrol else goal
    patrol = patrol if patrol else (env.patrol if goal is None else None)
    if goal is not None:
        graph, env = build_graph(env, goal)
        return plan_stabilization(graph, env), env, graph
    if patrol:
        graph, env = build_graph(env)
        return plan_patrol(graph, env, patrol), env, graph
    raise PlanningError("environment defines neither a goal nor a patrol cycle")
