"""File formats: environment JSON, controller bundles, trajectory CSV, SVG and config."""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Environment, GeometryError
from .planner import ExitPlan
from .synthesis import CellController
from .transversal import LinearSystem, double_integrator, single_integrator

BUNDLE_VERSION = 1


class SchemaError(ValueError):
    """Malformed input file; ``where`` locates the offending field."""

    def __init__(self, message, where=""):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise SchemaError("file not found", str(path))
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON ({exc.msg})", f"{path}:{exc.lineno}:{exc.colno}") from exc


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# environment

def _require(d, key, where):
    if key not in d:
        raise SchemaError(f"missing field '{key}'", where)
    return d[key]


def _id_list(v, where, n_vertices):
    if not isinstance(v, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in v):
        raise SchemaError("expected a list of integer vertex ids", where)
    bad = [i for i in v if not 0 <= i < n_vertices]
    if bad:
        raise SchemaError(f"vertex ids {bad} out of range 0..{n_vertices - 1}", where)
    return v


def environment_from_dict(d: dict, where: str = "environment") -> Environment:
    verts = _require(d, "vertices", where)
    try:
        V = np.asarray(verts, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError("vertices must be a list of [x, y] pairs", f"{where}.vertices") from exc
    if V.ndim != 2 or V.shape[1] != 2 or not np.all(np.isfinite(V)):
        raise SchemaError("vertices must be a list of finite [x, y] pairs", f"{where}.vertices")
    cells = _require(d, "cells", where)
    if not isinstance(cells, list) or not cells:
        raise SchemaError("cells must be a non-empty list", f"{where}.cells")
    ids, vids, lids = [], [], []
    for k, c in enumerate(cells):
        w = f"{where}.cells[{k}]"
        if not isinstance(c, dict):
            raise SchemaError("cell must be an object", w)
        cid = _require(c, "id", w)
        if not isinstance(cid, int) or isinstance(cid, bool):
            raise SchemaError("id must be an integer", f"{w}.id")
        ids.append(cid)
        vids.append(_id_list(_require(c, "vertex_ids", w), f"{w}.vertex_ids", len(V)))
        if "landmark_ids" in c:
            lm = _id_list(c["landmark_ids"], f"{w}.landmark_ids", len(V))
            if not lm:
                raise SchemaError("landmark_ids must not be empty", f"{w}.landmark_ids")
            lids.append(lm)
        else:
            lids.append(None)
    kw = {}
    if "holes" in d:
        kw["holes"] = tuple(tuple(_id_list(h, f"{where}.holes[{k}]", len(V)))
                            for k, h in enumerate(d["holes"]))
    if "outer" in d:
        kw["outer"] = tuple(_id_list(d["outer"], f"{where}.outer", len(V)))
    if "goal" in d and d["goal"] is not None:
        g = np.asarray(d["goal"], dtype=float)
        if g.shape != (2,):
            raise SchemaError("goal must be [x, y]", f"{where}.goal")
        kw["goal"] = g
    if "patrol" in d and d["patrol"]:
        kw["patrol"] = tuple(int(c) for c in d["patrol"])
    try:
        return Environment.from_ids(V, vids, ids, lids, **kw)
    except GeometryError as exc:
        raise SchemaError(str(exc), f"{where}.cells") from exc


def environment_to_dict(env: Environment) -> dict:
    cells = []
    for c in env.cells:
        item = {"id": int(c.id), "vertex_ids": [int(i) for i in c.vertex_ids]}
        if tuple(c.landmark_ids) != tuple(c.vertex_ids):
            item["landmark_ids"] = [int(i) for i in c.landmark_ids]
        cells.append(item)
    out = {"vertices": env.vertices.tolist(), "cells": cells,
           "outer": [int(i) for i in env.outer],
           "holes": [[int(i) for i in h] for h in env.holes]}
    if env.goal is not None:
        out["goal"] = [float(v) for v in env.goal]
    if env.patrol:
        out["patrol"] = [int(c) for c in env.patrol]
    return out


def load_environment(path) -> Environment:
    return environment_from_dict(read_json(path), str(path))


def save_environment(env: Environment, path) -> Path:
    return atomic_write(path, _dumps(environment_to_dict(env)))


# system

def system_from_dict(d: dict, where: str = "system") -> LinearSystem:
    if "order" in d:
        order = d["order"]
        if order == 1:
            return single_integrator(int(d.get("d", 2)), float(_require(d, "u_max", where)))
        if order == 2:
            return double_integrator(int(d.get("d", 2)), float(_require(d, "v_max", where)),
                                     float(_require(d, "u_max", where)))
        raise SchemaError("order must be 1 or 2", f"{where}.order")
    try:
        return LinearSystem.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(str(exc), where) from exc


# bundle

def env_hash(env: Environment) -> str:
    """Digest over every cell's landmark ids and exact landmark coordinates."""
    h = hashlib.sha256()
    for c in sorted(env.cells, key=lambda c: c.id):
        h.update(f"{c.id}:{','.join(map(str, c.landmark_ids))}:".encode())
        h.update(",".join(float(v).hex() for v in c.landmarks.T.reshape(-1)).encode())
        h.update(b";")
    return h.hexdigest()


def _payload_digest(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _mat(M) -> dict:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return {"shape": list(M.shape), "data": M.reshape(-1).tolist()}


def _unmat(d) -> np.ndarray:
    return np.asarray(d["data"], dtype=float).reshape(d["shape"])


def bundle_to_dict(controllers: dict, env: Environment, system: LinearSystem, plan: ExitPlan) -> dict:
    ctrls = {}
    for cid, c in sorted(controllers.items()):
        ctrls[str(cid)] = {
            "K1": _mat(c.K1),
            "K2": _mat(c.K2.reshape(c.K1.shape[0], -1)),
            "S_b": [float(v) for v in c.S_b],
            "S_l": float(c.S_l),
            "objective": float(c.objective),
            "c_b": [[float(v) for v in row] for row in c.c_b],
            "c_V": [float(v) for v in c.c_V],
            "landmark_ids": [int(i) for i in c.landmark_ids],
            "exit": [c.exit[0], int(c.exit[1])],
        }
    payload = {"version": BUNDLE_VERSION, "env_hash": env_hash(env), "system": system.to_dict(),
               "plan": plan.to_dict(), "controllers": ctrls}
    return {**payload, "digest": _payload_digest(payload)}


def save_bundle(path, controllers, env, system, plan) -> Path:
    return atomic_write(path, _dumps(bundle_to_dict(controllers, env, system, plan)))


def plan_from_dict(d: dict) -> ExitPlan:
    exits, succ = {}, {}
    for k, v in d["exits"].items():
        exits[int(k)] = (v["kind"], int(v["index"]))
        if "to" in v:
            succ[int(k)] = int(v["to"])
    goal = np.asarray(d["goal"], dtype=float) if "goal" in d else None
    return ExitPlan(exits, succ, d["objective"], tuple(d.get("cycle", ())), goal)


def bundle_from_dict(d: dict, env: Environment | None = None):
    """Returns ``(controllers, system, plan)``; refuses tampered or mismatched bundles."""
    payload = {k: v for k, v in d.items() if k != "digest"}
    if d.get("digest") != _payload_digest(payload):
        raise SchemaError("bundle digest mismatch (file corrupted or edited)", "bundle.digest")
    if env is not None and d["env_hash"] != env_hash(env):
        raise SchemaError("bundle was synthesized for a different environment "
                          "(landmark coordinates or order differ)", "bundle.env_hash")
    system = system_from_dict(d["system"])
    plan = plan_from_dict(d["plan"])
    ctrls = {}
    for k, c in d["controllers"].items():
        cid = int(k)
        if env is not None and tuple(c["landmark_ids"]) != tuple(env.cell(cid).landmark_ids):
            raise SchemaError(f"landmark order of cell {cid} differs from the environment",
                              f"bundle.controllers.{k}.landmark_ids")
        K1 = _unmat(c["K1"])
        K2 = _unmat(c["K2"]).reshape(K1.shape[0], -1)
        ctrls[cid] = CellController(cid, K1, K2, np.asarray(c["S_b"], dtype=float), float(c["S_l"]),
                                    float(c["objective"]),
                                    tuple(np.asarray(r, dtype=float) for r in c["c_b"]),
                                    np.asarray(c["c_V"], dtype=float), tuple(c["landmark_ids"]),
                                    (c["exit"][0], int(c["exit"][1])))
    return ctrls, system, plan


def load_bundle(path, env: Environment | None = None):
    return bundle_from_dict(read_json(path), env)


# trajectory

def trajectory_csv(traj) -> str:
    n_x = traj.x.shape[1]
    n_u = traj.u.shape[1] if traj.u.ndim == 2 else 0
    head = ["t"] + [f"x{i + 1}" for i in range(n_x)] + [f"u{i + 1}" for i in range(n_u)]
    lines = [",".join(head + ["cell", "V", "min_h"])]
    for k in range(len(traj.t)):
        vals = [traj.t[k], *traj.x[k], *(traj.u[k] if n_u else ())]
        row = [f"{v:.9g}" for v in vals] + [str(int(traj.cell[k])), f"{traj.V[k]:.9g}",
                                             f"{traj.min_h[k]:.9g}"]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_trajectory_csv(traj, path) -> Path:
    return atomic_write(path, trajectory_csv(traj))


def read_trajectory_csv(path) -> dict:
    text = Path(path).read_text().splitlines()
    head = text[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in text[1:] if ln])
    return {h: data[:, i] for i, h in enumerate(head)}


def svg_plot(env: Environment, trajectories=(), starts=(), goal=None, size: int = 480) -> str:
    V = env.vertices
    lo, hi = V.min(axis=0), V.max(axis=0)
    span = float(max(hi - lo)) or 1.0
    pad = 0.05 * span
    s = size / (span + 2 * pad)
    W = (hi[0] - lo[0] + 2 * pad) * s
    H = (hi[1] - lo[1] + 2 * pad) * s

    def pt(p):
        return f"{(p[0] - lo[0] + pad) * s:.2f},{(hi[1] - p[1] + pad) * s:.2f}"

    def poly(P, style):
        return f'<polygon points="{" ".join(pt(p) for p in P)}" style="{style}"/>'

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0f}" height="{H:.0f}">']
    out.append(poly(env.outer_polygon, "fill:#ffffff;stroke:#000000;stroke-width:2"))
    for c in env.cells:
        out.append(poly(c.vertices, "fill:none;stroke:#9aa5b1;stroke-width:0.8"))
        cx, cy = pt(c.centroid).split(",")
        out.append(f'<text x="{cx}" y="{cy}" font-size="10" fill="#7b8794">{c.id}</text>')
    for h in env.hole_polygons:
        out.append(poly(h, "fill:#b0b0b0;stroke:#000000;stroke-width:1.5"))
    colors = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e")
    for k, tr in enumerate(trajectories):
        P = tr.x[:, :2]
        step = max(1, len(P) // 4000)
        pts = " ".join(pt(p) for p in P[::step])
        out.append(f'<polyline points="{pts}" style="fill:none;stroke:{colors[k % len(colors)]};'
                   'stroke-width:1.5"/>')
    for p in starts:
        x, y = pt(p).split(",")
        out.append(f'<circle cx="{x}" cy="{y}" r="4" fill="#2ca02c"/>')
    if goal is not None:
        x, y = pt(goal).split(",")
        out.append(f'<circle cx="{x}" cy="{y}" r="5" fill="#d62728"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, env, trajectories=(), starts=(), goal=None) -> Path:
    return atomic_write(path, svg_plot(env, trajectories, starts, goal))


# config

@dataclass
class ProjectConfig:
    environment: Path
    system: dict
    c_b: list = field(default_factory=lambda: [0.5])
    c_V: list = field(default_factory=lambda: [0.5])
    poles_b: list | None = None
    poles_V: list | None = None
    w_b: object = 1.0
    w_l: float = 1.0
    goal: list | None = None
    patrol: list | None = None
    x0: list = field(default_factory=list)
    dt: float = 1e-3
    t_max: float = 100.0
    patrol_cycles: int = 1
    deformation: Path | None = None
    out: Path = Path("out")
    seed: int = 0
    method: str = "simplex"
    n_jobs: int = 1


_CONFIG_KEYS = set(ProjectConfig.__dataclass_fields__)


def load_config(path) -> ProjectConfig:
    path = Path(path)
    d = read_json(path)
    where = str(path)
    unknown = sorted(set(d) - _CONFIG_KEYS)
    if unknown:
        raise SchemaError(f"unknown fields {unknown}", where)
    base = path.parent
    env = base / _require(d, "environment", where)
    if not env.exists():
        raise SchemaError(f"environment file {env} does not exist", f"{where}.environment")
    cfg = ProjectConfig(environment=env, system=_require(d, "system", where))
    for k in ("c_b", "c_V", "poles_b", "poles_V", "w_b", "w_l", "goal", "patrol", "x0", "dt",
              "t_max", "patrol_cycles", "seed", "method", "n_jobs"):
        if k in d:
            setattr(cfg, k, d[k])
    if "deformation" in d and d["deformation"]:
        cfg.deformation = base / d["deformation"]
        if not cfg.deformation.exists():
            raise SchemaError(f"deformation file {cfg.deformation} does not exist",
                              f"{where}.deformation")
    cfg.out = base / d.get("out", "out")
    if not float(cfg.dt) > 0:
        raise SchemaError("dt must be positive", f"{where}.dt")
    if not float(cfg.t_max) > 0:
        raise SchemaError("t_max must be positive", f"{where}.t_max")
    for k in ("poles_b", "poles_V"):
        v = getattr(cfg, k)
        if v is not None and any(float(p) <= 0 for p in v):
            raise SchemaError("poles must be positive", f"{where}.{k}")
    if cfg.method not in ("simplex", "highs"):
        raise SchemaError("method must be 'simplex' or 'highs'", f"{where}.method")
    return cfg


def load_deformation(path, env: Environment | None = None):
    from .simulate import DeformationMap

    d = read_json(path)
    moves = _require(d, "moves", str(path))
    out = {}
    for k, p in moves.items():
        try:
            vid = int(k)
        except ValueError as exc:
            raise SchemaError("vertex id keys must be integers", f"{path}.moves.{k}") from exc
        if env is not None and not 0 <= vid < len(env.vertices):
            raise SchemaError(f"vertex id {vid} out of range", f"{path}.moves.{k}")
        out[vid] = np.asarray(p, dtype=float)
    return DeformationMap(out)


def save_deformation(dm, path) -> Path:
    moves = {str(k): [float(v) for v in p] for k, p in sorted(dm.moves.items())}
    return atomic_write(path, _dumps({"moves": moves}))
