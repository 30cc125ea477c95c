"""Closed-loop simulation of the switched per-cell controllers.

The agent only ever sees landmark displacements of the active cell: the
input is recomputed from ``y = vec(Y - p 1^T)`` at every RK4 stage.  A cell
is left when its ``V`` reaches zero; the crossing is refined by bisection
on the step length.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Environment, GeometryError, exit_spec, validate_environment
from .synthesis import landmark_vector, make_program
from .transversal import LinearSystem, barrier_rows

EVENT_TOL = 1e-9
BARRIER_TOL = 1e-6
SAFETY_KINDS = frozenset({"barrier", "input", "breach", "empty"})


class SimulationError(RuntimeError):
    def __init__(self, message, trajectory=None, state=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.state = state


class SafetyBreach(SimulationError):
    """The position left every cell."""


class BarrierViolation(SimulationError):
    """A barrier of the active cell went below ``-BARRIER_TOL``."""


class DeformationError(ValueError):
    pass


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    cell: np.ndarray
    V: np.ndarray
    min_h: np.ndarray
    exit_times: dict = field(default_factory=dict)
    visits: list = field(default_factory=list)
    cycle_starts: list = field(default_factory=list)
    status: str = "t_max"
    violation: dict | None = None

    @property
    def positions(self) -> np.ndarray:
        return self.x

    def __len__(self):
        return len(self.t)


class _CellRuntime:
    """Per-cell quantities used inside the integration loop."""

    def __init__(self, cell, ctrl, exit, system: LinearSystem):
        self.id = cell.id
        self.cell = cell
        self.ctrl = ctrl
        self.spec = exit_spec(cell, exit, system)
        rows = barrier_rows(cell, system, self.spec)
        self.H = np.array([r.A_h for r in rows])
        self.hb = np.array([r.b_h for r in rows])
        self.Yv = landmark_vector(cell.landmarks)
        self.pos = list(system.pos_idx)
        self.dyn = list(system.dyn_idx)
        self.d = system.d
        self.n_l = cell.landmarks.shape[1]
        self.A, self.B = system.A, system.B
        self.K1, self.K2 = ctrl.K1, ctrl.K2

    def control(self, x):
        p = x[self.pos]
        y = self.Yv - np.tile(p, self.n_l)
        u = self.K1 @ y
        if self.dyn:
            u = u + self.K2 @ x[self.dyn]
        return u

    def f(self, x):
        return self.A @ x + self.B @ self.control(x)

    def V(self, x):
        return float(self.spec.z @ x + self.spec.b_V)

    def min_h(self, x):
        return float(np.min(self.H @ x + self.hb)) if len(self.hb) else np.inf


def _rk4(rt, x, h):
    k1 = rt.f(x)
    k2 = rt.f(x + 0.5 * h * k1)
    k3 = rt.f(x + 0.5 * h * k2)
    k4 = rt.f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _runtimes(env, system, controllers, plan):
    out = {}
    for cid, ctrl in controllers.items():
        out[cid] = _CellRuntime(env.cell(cid), ctrl, plan.exits[cid], system)
    return out


def _locate(env, rts, p, exclude=None, tol=EVENT_TOL):
    ids = [cid for cid in env.locate(p, tol) if cid != exclude and cid in rts]
    return ids


def run(env: Environment, system: LinearSystem, controllers: dict, plan, x0, t_max: float,
        dt: float = 1e-3, patrol_cycles: int = 1, strict: bool = True,
        goal_tol: float = 1e-2, rest_tol: float = 1e-3) -> Trajectory:
    """Integrate the switched closed loop from ``x0``.

    Stops at the goal (position within ``goal_tol`` and ``||xdot|| <
    rest_tol``), after ``patrol_cycles`` full patrol cycles, or at
    ``t_max``.  With ``strict`` a barrier violation or safety breach raises;
    otherwise the run stops and the trajectory records the violation.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (system.n_x,):
        raise ValueError(f"x0 must have {system.n_x} entries")
    missing = sorted(set(plan.exits) - set(controllers))
    if missing:
        raise ValueError(f"no controller for cells {missing}")
    rts = _runtimes(env, system, controllers, plan)
    p0 = x[list(system.pos_idx)]
    cands = _locate(env, rts, p0)
    if not cands:
        raise ValueError(f"start position {p0.tolist()} is not inside any cell")
    if len(system.b_dyn) and np.any(system.A_dyn @ x > system.b_dyn + EVENT_TOL):
        raise ValueError("start state violates the dynamic bounds")
    inside = [c for c in cands if rts[c].V(x) > 0 or rts[c].spec.kind == "point"]
    cur = rts[(inside or cands)[0]]

    T, X, U, C, Vs, Hs = [], [], [], [], [], []
    visits = [[cur.id, 0.0, None]]
    cycle = list(plan.cycle)
    cycle_starts = []
    if cur.id in cycle:
        cycle_starts.append(0.0)
    anchor = cur.id if cur.id in cycle else None

    def record(t, x, rt):
        T.append(t)
        X.append(x.copy())
        U.append(rt.control(x))
        C.append(rt.id)
        Vs.append(rt.V(x))
        Hs.append(rt.min_h(x))

    def finish(status, violation=None):
        traj = Trajectory(np.array(T), np.array(X), np.array(U), np.array(C), np.array(Vs),
                          np.array(Hs), status=status, violation=violation)
        ex = {}
        for cid, t0, t1 in visits:
            if t1 is not None:
                ex.setdefault(cid, []).append((t0, t1))
        traj.exit_times = ex
        traj.visits = [tuple(v) for v in visits]
        traj.cycle_starts = list(cycle_starts)
        return traj

    t = 0.0
    record(t, x, cur)
    n_steps = int(np.ceil(t_max / dt - 1e-12))
    step = 0
    while step < n_steps:
        h = min(dt, t_max - t)
        if h <= 1e-15:
            break
        x_new = _rk4(cur, x, h)
        if cur.spec.kind == "face" and cur.V(x_new) <= 0.0:
            lo, hi = 0.0, h
            while hi - lo > EVENT_TOL:
                mid = 0.5 * (lo + hi)
                if cur.V(_rk4(cur, x, mid)) <= 0.0:
                    hi = mid
                else:
                    lo = mid
            x_c = _rk4(cur, x, hi)
            t_c = t + hi
            mh = cur.min_h(x_c)
            record(t_c, x_c, cur)
            if mh < -BARRIER_TOL:
                viol = {"kind": "barrier", "cell": cur.id, "t": t_c, "min_h": mh}
                if strict:
                    raise BarrierViolation(f"barrier violated in cell {cur.id} at t={t_c:.6f}",
                                           finish("violation", viol), x_c)
                return finish("violation", viol)
            visits[-1][2] = t_c
            p = x_c[list(system.pos_idx)]
            nxt = plan.successor.get(cur.id)
            # exits that graze a vertex may overshoot the next wall by rounding only
            if nxt is None or not env.cell(nxt).contains(p, BARRIER_TOL):
                others = _locate(env, rts, p, exclude=cur.id, tol=BARRIER_TOL)
                if not others:
                    viol = {"kind": "breach", "cell": cur.id, "t": t_c}
                    if strict:
                        raise SafetyBreach(f"position {p.tolist()} left all cells at t={t_c:.6f}",
                                           finish("breach", viol), x_c)
                    return finish("breach", viol)
                nxt = others[0]
            cur = rts[nxt]
            visits.append([cur.id, t_c, None])
            x, t = x_c, t_c
            if cycle:
                if anchor is None and cur.id in cycle:
                    anchor = cur.id
                    cycle_starts.append(t)
                elif cur.id == anchor:
                    cycle_starts.append(t)
                    if len(cycle_starts) - 1 >= patrol_cycles:
                        return finish("patrol")
            if hi >= h:
                step += 1
            continue
        x, t = x_new, t + h
        step += 1
        record(t, x, cur)
        mh = Hs[-1]
        if mh < -BARRIER_TOL:
            p = x[list(system.pos_idx)]
            kind = "barrier" if _locate(env, rts, p) else "breach"
            viol = {"kind": kind, "cell": cur.id, "t": t, "min_h": mh}
            if strict:
                cls = BarrierViolation if kind == "barrier" else SafetyBreach
                raise cls(f"{kind} in cell {cur.id} at t={t:.6f} (min h = {mh:.3e})",
                          finish("violation", viol), x)
            return finish("violation", viol)
        if cur.spec.kind == "point":
            g = cur.spec.exit_vertices[0]
            if (np.linalg.norm(x[list(system.pos_idx)] - g) < goal_tol
                    and np.linalg.norm(cur.f(x)) < rest_tol):
                return finish("goal")
    return finish("t_max")


def _segments(cells):
    """Index ranges ``[i, j)`` of consecutive samples in the same cell."""
    out = []
    start = 0
    for k in range(1, len(cells) + 1):
        if k == len(cells) or cells[k] != cells[start]:
            out.append((start, k))
            start = k
    return out


def monitor(traj: Trajectory, env: Environment, system: LinearSystem, controllers: dict, plan,
            fd_tol_first: float = 1e-3, fd_tol_higher: float = 1e-2) -> dict:
    """Check a trajectory against barrier, Lyapunov, exit-time and input bounds.

    All checks are recomputed from the recorded states and the geometry in
    ``env``; nothing is read back from the integrator's own bookkeeping
    except the sample-to-cell assignment.
    """
    violations = []
    cells_report = {}
    if len(traj) == 0:
        return {"ok": False, "safe": False, "violations": [{"kind": "empty"}], "cells": {}}
    U_tol = 1e-9 * max(1.0, float(np.max(np.abs(system.b_u)))) if len(system.b_u) else 0.0
    for i0, i1 in _segments(traj.cell):
        cid = int(traj.cell[i0])
        ctrl = controllers[cid]
        prog = make_program(env.cell(cid), system, plan.exits[cid], c_V=ctrl.c_V,
                            c_b_rows=dict(enumerate(ctrl.c_b)))
        X = traj.x[i0:i1]
        t = traj.t[i0:i1]
        H = np.array([[rw.value(x) for rw in prog.rows] for x in X]).reshape(len(X), -1)
        entry = cells_report.setdefault(cid, {"min_h": np.inf, "max_clf_residual": -np.inf,
                                              "exit_times": [], "S_l": ctrl.S_l})
        if H.size:
            mh = float(H.min())
            entry["min_h"] = min(entry["min_h"], mh)
            if mh < -BARRIER_TOL:
                k = int(np.argmin(H.min(axis=1)))
                violations.append({"kind": "barrier", "cell": cid, "t": float(t[k]), "value": mh,
                                   "row": int(np.argmin(H[k]))})
        V = X @ prog.exit.z + prog.exit.b_V
        r = prog.r_V
        lo, hi = 1, len(t) - 1 - (1 if r > 1 else 0)
        if hi - lo >= 1 and len(t) >= 5:
            derivs = [V]
            for _ in range(r):
                derivs.append(np.gradient(derivs[-1], t))
            resid = derivs[r] + sum(prog.c_V[j] * derivs[j] for j in range(r))
            sl = slice(lo + r - 1, hi - (r - 1))
            excess = resid[sl] - ctrl.S_l
            if excess.size:
                entry["max_clf_residual"] = max(entry["max_clf_residual"], float(excess.max()))
                tol = fd_tol_first if r == 1 else fd_tol_higher
                if excess.max() > tol:
                    k = int(np.argmax(excess))
                    violations.append({"kind": "clf", "cell": cid,
                                       "t": float(t[sl][k]), "value": float(excess.max())})
        Uc = traj.u[i0:i1]
        if len(system.b_u):
            ures = Uc @ system.A_u.T - system.b_u
            if ures.max() > U_tol:
                k = int(np.argmax(ures.max(axis=1)))
                violations.append({"kind": "input", "cell": cid, "t": float(t[k]),
                                   "value": float(ures.max())})
    for cid, spans in traj.exit_times.items():
        ctrl = controllers[cid]
        spec = exit_spec(env.cell(cid), plan.exits[cid], system)
        d_max = float(np.max(env.cell(cid).vertices @ (system.P_pos @ spec.z) + spec.b_V))
        for t0, t1 in spans:
            dur = t1 - t0
            entry = cells_report.setdefault(cid, {"exit_times": []})
            bound = d_max / abs(ctrl.S_l) if ctrl.S_l < 0 else np.inf
            entry.setdefault("exit_times", []).append({"duration": dur, "bound": bound})
            if system.n_x == system.d and ctrl.S_l < 0 and dur > bound + 1e-3:
                violations.append({"kind": "exit_time", "cell": cid, "t": t1,
                                   "value": dur, "bound": bound})
    report = {"ok": not violations, "violations": violations, "cells": cells_report,
              "status": traj.status}
    if traj.status == "goal" or (len(traj) and plan.objective == "stabilization"):
        last = traj.x[-1]
        cid = int(traj.cell[-1])
        M, q = controllers[cid].closed_loop(env.cell(cid).landmarks, system)
        report["terminal_speed"] = float(np.linalg.norm(M @ last + q))
    if plan.cycle:
        report["periodicity"] = periodicity(traj)
    if traj.violation is not None:
        report["ok"] = False
        report["violations"].append(dict(traj.violation))
    report["safe"] = (traj.status in ("goal", "patrol")
                      and not any(v["kind"] in SAFETY_KINDS for v in report["violations"]))
    return report


def periodicity(traj: Trajectory, skip: int = 1) -> dict:
    """Compare the position traces of consecutive patrol cycles.

    Cycles are delimited by re-entries into the first visited cycle cell.
    The first ``skip`` cycles are treated as transient.  Each later cycle is
    compared with the one before it on time since cycle start.
    """
    starts = traj.cycle_starts
    n_cycles = len(starts) - 1
    out = {"cycles": n_cycles, "periods": [], "deviation": []}
    if n_cycles < 1:
        return out
    pos = traj.x
    traces = []
    for a, b in zip(starts[:-1], starts[1:]):
        idx = np.nonzero((traj.t >= a - 1e-12) & (traj.t <= b + 1e-12))[0]
        traces.append((traj.t[idx] - a, pos[idx]))
        out["periods"].append(b - a)
    for k in range(skip + 1, n_cycles):
        (ta, xa), (tb, xb) = traces[k - 1], traces[k]
        tmax = min(ta[-1], tb[-1])
        grid = tb[tb <= tmax]
        dev = 0.0
        for j in range(xa.shape[1]):
            dev = max(dev, float(np.max(np.abs(np.interp(grid, ta, xa[:, j]) - xb[tb <= tmax, j]))))
        dev = max(dev, abs(ta[-1] - tb[-1]))
        out["deviation"].append(dev)
    return out


@dataclass(frozen=True)
class DeformationMap:
    """Displaced coordinates for a subset of environment vertex ids."""

    moves: dict

    def apply(self, env: Environment) -> Environment:
        V = np.array(env.vertices, dtype=float)
        for vid, p in self.moves.items():
            if not 0 <= int(vid) < len(V):
                raise DeformationError(f"vertex id {vid} out of range")
            V[int(vid)] = np.asarray(p, dtype=float)
        try:
            return env.with_vertices(V)
        except GeometryError as exc:
            raise DeformationError(f"deformation breaks a cell: {exc}") from exc

    @classmethod
    def identity(cls) -> "DeformationMap":
        return cls({})

    @classmethod
    def transform(cls, env: Environment, vertex_ids, fn) -> "DeformationMap":
        return cls({int(v): np.asarray(fn(env.vertices[int(v)]), dtype=float) for v in vertex_ids})

    @classmethod
    def scale(cls, env: Environment, vertex_ids, factor: float, center=None) -> "DeformationMap":
        pts = env.vertices[list(vertex_ids)]
        c = pts.mean(axis=0) if center is None else np.asarray(center, dtype=float)
        return cls.transform(env, vertex_ids, lambda p: c + factor * (p - c))

    @classmethod
    def rotate(cls, env: Environment, vertex_ids, angle: float, center=None) -> "DeformationMap":
        pts = env.vertices[list(vertex_ids)]
        c = pts.mean(axis=0) if center is None else np.asarray(center, dtype=float)
        R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        return cls.transform(env, vertex_ids, lambda p: c + R @ (p - c))


def deform_environment(env: Environment, deformation: DeformationMap, seed: int = 0) -> Environment:
    """Apply ``deformation`` and reject results that fail validation."""
    new = deformation.apply(env)
    rep = validate_environment(new, seed=seed)
    if not rep.ok:
        kinds = sorted({v["kind"] for v in rep.violations})
        raise DeformationError(f"deformed environment is invalid: {', '.join(kinds)}")
    if new.adjacency_pairs() != env.adjacency_pairs():
        raise DeformationError("deformation changes cell adjacency")
    return new


def deform_and_replay(env: Environment, deformation: DeformationMap, system: LinearSystem,
                      controllers: dict, plan, x0, t_max: float, dt: float = 1e-3,
                      **kw) -> tuple[Trajectory, dict]:
    """Replay the original gains on the deformed layout.

    Landmarks, barriers and exit tests all come from the deformed geometry.
    Success is an empirical observation, not a certificate.
    """
    new = deform_environment(env, deformation)
    kw.setdefault("strict", False)
    traj = run(new, system, controllers, plan, x0, t_max, dt, **kw)
    rep = monitor(traj, new, system, controllers, plan)
    # certified margins do not carry over, so only safety and completion count here
    rep["margin_deficits"] = [v for v in rep["violations"] if v["kind"] not in SAFETY_KINDS]
    rep["violations"] = [v for v in rep["violations"] if v["kind"] in SAFETY_KINDS]
    rep["ok"] = rep["safe"]
    rep["certified"] = False
    rep["note"] = "empirical robustness - not certified"
    return traj, rep
