"""Per-cell robust CLF/CBF synthesis of landmark output-feedback gains.

For one cell the controller is ``u = K1 y + K2 x_dyn`` with the measurement
``y = vec(Y - p 1^T)`` (landmark-major, coordinate-minor).  Every barrier,
Lyapunov and input constraint must hold on the whole state polytope
``X = cell x dyn_bounds``; each such "for all x" constraint is an inner
maximization over ``X`` which is replaced by its LP dual, so a single LP in
``(K1, K2, S_b, S_l, lambda)`` gives the optimal gains.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import ConvexCell, ExitSpec, exit_spec
from .lp import LinearProgram, dualize_max, polytope_vertices, solve
from .transversal import (
    BarrierRow,
    LinearSystem,
    ModelError,
    TransversalCoeffs,
    barrier_rows,
    relative_degree,
)

VERIFY_TOL = 1e-6
CENTER_TOL = 1e-9


class SynthesisError(RuntimeError):
    """Synthesis failed for a cell; ``family`` names the binding constraint group."""

    def __init__(self, message, cell_id=None, family=None, rows=()):
        super().__init__(message)
        self.cell_id = cell_id
        self.family = family
        self.rows = list(rows)


def _as_coeffs(c) -> np.ndarray:
    if isinstance(c, TransversalCoeffs):
        return c.c
    return TransversalCoeffs(np.atleast_1d(np.asarray(c, dtype=float))).c


def _fit_coeffs(c: np.ndarray, r: int) -> np.ndarray:
    # rows of lower relative degree (e.g. velocity limits) use the leading entries
    if len(c) < r:
        raise ModelError(f"coefficient vector of length {len(c)} cannot serve relative degree {r}")
    return _as_coeffs(c[:r])


def state_polytope(cell: ConvexCell, system: LinearSystem) -> tuple[np.ndarray, np.ndarray]:
    """``A_x x <= b_x`` for the cell position polytope times the dynamic bounds."""
    A_x = np.vstack([cell.A @ system.P_pos, system.A_dyn])
    b_x = np.concatenate([cell.b, system.b_dyn])
    return A_x, b_x


def state_vertices(cell: ConvexCell, system: LinearSystem) -> np.ndarray:
    """Vertices of ``X``: every cell vertex paired with every dynamic-box vertex."""
    P_pos, P_dyn = system.P_pos, system.P_dyn
    if len(system.dyn_idx) == 0:
        return cell.vertices @ P_pos
    A_d = system.A_dyn @ P_dyn.T
    dyn_verts = polytope_vertices(A_d, system.b_dyn)
    return np.array([p @ P_pos + v @ P_dyn for p in cell.vertices for v in dyn_verts])


def landmark_vector(Y) -> np.ndarray:
    """Column-major vectorization of the ``d x n_l`` landmark matrix."""
    return np.asarray(Y, dtype=float).T.reshape(-1)


def measurement(Y, p) -> np.ndarray:
    """``y = vec(Y - p 1^T)``: landmark displacements, landmark-major."""
    Y = np.asarray(Y, dtype=float)
    return (Y - np.asarray(p, dtype=float)[:, None]).T.reshape(-1)


@dataclass(frozen=True)
class CellProgram:
    """All data of the robust program for one cell."""

    cell: ConvexCell
    exit: ExitSpec
    rows: tuple
    reldeg: tuple
    c_rows: tuple
    c_V: np.ndarray
    r_V: int
    w_b: np.ndarray
    w_l: float

    @property
    def s_h(self) -> int:
        return len(self.rows)

    @property
    def Y(self) -> np.ndarray:
        return self.cell.landmarks

    @property
    def n_l(self) -> int:
        return self.cell.landmarks.shape[1]


def make_program(cell: ConvexCell, system: LinearSystem, exit, c_b=(0.5,), c_V=(0.5,),
                 w_b=1.0, w_l: float = 1.0, c_b_rows=None) -> CellProgram:
    """Collect barrier rows, relative degrees and coefficients for ``cell``.

    ``c_b_rows`` optionally maps barrier-row index to its own coefficient
    vector; otherwise ``c_b`` is shared by all rows.  ``w_b`` is a scalar, one
    weight per row, or a mapping from row source (``"pos"``/``"dyn"``) to weight.
    """
    spec = exit if isinstance(exit, ExitSpec) else exit_spec(cell, exit, system)
    if np.linalg.norm(system.P_dyn @ spec.z) > 1e-12:
        raise ModelError("exit direction must vanish on the dynamic coordinates")
    rows = barrier_rows(cell, system, spec)
    r_V = relative_degree(spec.z, system)
    reldeg = tuple(relative_degree(rw.A_h, system) for rw in rows)
    for i, (rw, r) in enumerate(zip(rows, reldeg)):
        if rw.source == "pos" and r != r_V:
            raise ModelError(
                f"relative degree mismatch in cell {cell.id}: barrier row {i} has {r}, V has {r_V}"
            )
    c_b = np.atleast_1d(np.asarray(c_b.c if isinstance(c_b, TransversalCoeffs) else c_b, float))
    c_rows = []
    for i, r in enumerate(reldeg):
        ci = c_b if not c_b_rows or i not in c_b_rows else np.atleast_1d(np.asarray(c_b_rows[i], float))
        c_rows.append(_fit_coeffs(ci, r))
    cV = np.atleast_1d(np.asarray(c_V.c if isinstance(c_V, TransversalCoeffs) else c_V, float))
    if isinstance(w_b, dict):
        w_b = [w_b.get(rw.source, 1.0) for rw in rows]
    w_b = np.broadcast_to(np.asarray(w_b, dtype=float), (len(rows),)).copy()
    if np.any(w_b <= 0) or w_l <= 0:
        raise ModelError("weights must be strictly positive")
    return CellProgram(cell, spec, tuple(rows), reldeg, tuple(c_rows), _fit_coeffs(cV, r_V),
                       r_V, w_b, float(w_l))


@dataclass
class CellController:
    """Synthesized gains of one cell plus its optimal margins."""

    cell_id: int
    K1: np.ndarray
    K2: np.ndarray
    S_b: np.ndarray
    S_l: float
    objective: float
    c_b: tuple
    c_V: np.ndarray
    landmark_ids: tuple
    exit: tuple
    lambdas: dict = field(default_factory=dict, repr=False)
    verification: dict = field(default_factory=dict, repr=False)

    def K_x(self, system: LinearSystem) -> np.ndarray:
        d = system.d
        n_l = self.K1.shape[1] // d
        M = np.tile(np.eye(d), (n_l, 1))
        return -self.K1 @ M @ system.P_pos + self.K2 @ system.P_dyn

    def control(self, x, Y, system: LinearSystem) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = measurement(Y, x[list(system.pos_idx)])
        u = self.K1 @ y
        if self.K2.size:
            u = u + self.K2 @ x[list(system.dyn_idx)]
        return u

    def closed_loop(self, Y, system: LinearSystem) -> tuple[np.ndarray, np.ndarray]:
        """``xdot = M x + q`` for the given landmark positions."""
        M = system.A + system.B @ self.K_x(system)
        q = system.B @ (self.K1 @ landmark_vector(Y))
        return M, q


class _Layout:
    def __init__(self, prog: CellProgram, system: LinearSystem, m_x: int):
        self.n_u = system.n_u
        self.dn_l = system.d * prog.n_l
        self.n_dyn = len(system.dyn_idx)
        self.s_h = prog.s_h
        self.s_u = len(system.b_u)
        self.m_x = m_x
        sizes = [
            ("K1", self.n_u * self.dn_l), ("K2", self.n_u * self.n_dyn),
            ("S_b", self.s_h), ("S_l", 1),
            ("lam_b", self.s_h * m_x), ("lam_l", m_x), ("lam_u", self.s_u * m_x),
        ]
        self.sl = {}
        start = 0
        for name, size in sizes:
            self.sl[name] = slice(start, start + size)
            start += size
        self.n = start

    def lam(self, family, i=0):
        base = self.sl[family].start + i * self.m_x
        return slice(base, base + self.m_x)

    def names(self):
        out = []
        out += [f"K1[{i},{j}]" for i in range(self.n_u) for j in range(self.dn_l)]
        out += [f"K2[{i},{j}]" for i in range(self.n_u) for j in range(self.n_dyn)]
        out += [f"Sb{i}" for i in range(self.s_h)] + ["Sl"]
        out += [f"lb{i}_{k}" for i in range(self.s_h) for k in range(self.m_x)]
        out += [f"ll_{k}" for k in range(self.m_x)]
        out += [f"lu{j}_{k}" for j in range(self.s_u) for k in range(self.m_x)]
        return tuple(out)


def _drift_row(a, system, r, c):
    """``a A^r + sum_j c_j a A^(j-1)`` as a state row."""
    Ar = np.linalg.matrix_power(system.A, r)
    out = a @ Ar
    for j, cj in enumerate(c):
        out = out + cj * (a @ np.linalg.matrix_power(system.A, j))
    return out


def assemble_cell_lp(prog: CellProgram, system: LinearSystem) -> LinearProgram:
    """Single LP equivalent to the cell's robust min-max program.

    Inequality rows come in the order: barrier bounds, Lyapunov bound,
    input bounds, then the sign rows ``S_b <= 0`` and ``S_l <= 0``.
    Equality rows are ``n_x`` per constraint family in the same order.
    """
    A_x, b_x = state_polytope(prog.cell, system)
    if len(system.dyn_idx) and len(system.A_dyn) == 0:
        raise ModelError("state polytope is unbounded: dynamic states need bounds")
    from .lp import polytope_is_bounded

    if not polytope_is_bounded(A_x, b_x):
        raise ModelError(f"state polytope of cell {prog.cell.id} is unbounded")
    lay = _Layout(prog, system, len(b_x))
    n_x = system.n_x
    M = np.tile(np.eye(system.d), (prog.n_l, 1)) @ system.P_pos
    Yv = landmark_vector(prog.Y)
    P_dyn = system.P_dyn

    G, h, Gl = [], [], []
    E, f, El = [], [], []

    def gain_terms(g):
        # (g K_x)^T = -kron(g, M^T) vec(K1) + kron(g, P_dyn^T) vec(K2)
        JK1 = -np.kron(g, M.T)
        JK2 = np.kron(g, P_dyn.T) if lay.n_dyn else np.zeros((n_x, 0))
        return JK1, JK2

    def add_family(label, lam_sl, g, sgn, drift, ineq_row, ineq_rhs):
        row = ineq_row
        row[lam_sl] = b_x
        G.append(row)
        h.append(ineq_rhs)
        Gl.append(f"{label}/bound")
        JK1, JK2 = gain_terms(g)
        for k in range(n_x):
            e = np.zeros(lay.n)
            e[lam_sl] = A_x[:, k]
            e[lay.sl["K1"]] = sgn * JK1[k]
            if lay.n_dyn:
                e[lay.sl["K2"]] = sgn * JK2[k]
            E.append(e)
            f.append(drift[k])
            El.append(f"{label}/eq{k}")

    for i, (rw, r, c) in enumerate(zip(prog.rows, prog.reldeg, prog.c_rows)):
        g = rw.A_h @ np.linalg.matrix_power(system.A, r - 1) @ system.B
        row = np.zeros(lay.n)
        row[lay.sl["S_b"].start + i] = -1.0
        row[lay.sl["K1"]] = -np.kron(g, Yv)
        # A_x^T lam = -(drift + g K_x)^T
        add_family(f"cbf[{i}]", lay.lam("lam_b", i), g, 1.0,
                   -_drift_row(rw.A_h, system, r, c), row, c[0] * rw.b_h)

    z, r = prog.exit.z, prog.r_V
    gz = z @ np.linalg.matrix_power(system.A, r - 1) @ system.B
    row = np.zeros(lay.n)
    row[lay.sl["S_l"]] = -1.0
    row[lay.sl["K1"]] = np.kron(gz, Yv)
    # A_x^T lam = (drift + gz K_x)^T
    add_family("clf", lay.lam("lam_l"), gz, -1.0, _drift_row(z, system, r, prog.c_V), row,
               -prog.c_V[0] * prog.exit.b_V)

    for j in range(lay.s_u):
        g = system.A_u[j]
        row = np.zeros(lay.n)
        row[lay.sl["K1"]] = np.kron(g, Yv)
        add_family(f"input[{j}]", lay.lam("lam_u", j), g, -1.0, np.zeros(n_x), row,
                   float(system.b_u[j]))

    for i in range(lay.s_h):
        row = np.zeros(lay.n)
        row[lay.sl["S_b"].start + i] = 1.0
        G.append(row)
        h.append(0.0)
        Gl.append(f"sign/S_b[{i}]")
    row = np.zeros(lay.n)
    row[lay.sl["S_l"]] = 1.0
    G.append(row)
    h.append(0.0)
    Gl.append("sign/S_l")

    c = np.zeros(lay.n)
    c[lay.sl["S_b"]] = prog.w_b
    c[lay.sl["S_l"]] = prog.w_l
    lb = np.full(lay.n, -np.inf)
    for fam in ("lam_b", "lam_l", "lam_u"):
        lb[lay.sl[fam]] = 0.0
    return LinearProgram(c, np.array(G), np.array(h), np.array(E), np.array(f), lb, "min",
                         tuple(Gl), tuple(El), lay.names())


def expected_row_count(prog: CellProgram, system: LinearSystem) -> int:
    """Constraint rows of the assembled LP, counted from the problem sizes."""
    n_x = system.n_x
    s_u = len(system.b_u)
    return prog.s_h * (1 + n_x) + (1 + n_x) + s_u * (1 + n_x) + (prog.s_h + 1)


def constraint_values(K1, K2, prog: CellProgram, system: LinearSystem, X) -> dict:
    """Evaluate the robust constraints of a gain pair at the states ``X``.

    Returns, per state, ``-(h^(r) + c.xi)`` for every barrier row, the
    Lyapunov expression ``V^(r) + c_V.xi_V`` and the input residuals
    ``A_u u - b_u``.  Computed from the closed loop ``xdot`` directly.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    ctrl = CellController(prog.cell.id, np.asarray(K1), np.asarray(K2).reshape(system.n_u, -1),
                          np.zeros(prog.s_h), 0.0, 0.0, prog.c_rows, prog.c_V,
                          prog.cell.landmark_ids, ())
    U = np.array([ctrl.control(x, prog.Y, system) for x in X])
    Xd = X @ system.A.T + U @ system.B.T
    out_b = np.zeros((len(X), prog.s_h))
    for i, (rw, r, c) in enumerate(zip(prog.rows, prog.reldeg, prog.c_rows)):
        Ar1 = np.linalg.matrix_power(system.A, r - 1)
        hr = Xd @ (rw.A_h @ Ar1)
        xi = np.stack([X @ (rw.A_h @ np.linalg.matrix_power(system.A, j)) for j in range(r)], axis=1)
        xi[:, 0] += rw.b_h
        out_b[:, i] = -(hr + xi @ c)
    z, r = prog.exit.z, prog.r_V
    Vr = Xd @ (z @ np.linalg.matrix_power(system.A, r - 1))
    xiV = np.stack([X @ (z @ np.linalg.matrix_power(system.A, j)) for j in range(r)], axis=1)
    xiV[:, 0] += prog.exit.b_V
    out_l = Vr + xiV @ prog.c_V
    out_u = U @ system.A_u.T - system.b_u
    return {"barrier": out_b, "clf": out_l, "input": out_u}


def vertex_margins(K1, K2, prog: CellProgram, system: LinearSystem) -> dict:
    """Worst case of each robust constraint over the vertices of ``X``."""
    vals = constraint_values(K1, K2, prog, system, state_vertices(prog.cell, system))
    return {"barrier": vals["barrier"].max(axis=0), "clf": float(vals["clf"].max()),
            "input": vals["input"].max(axis=0)}


def _family(label: str) -> str:
    return label.split("/")[0] if not label.startswith("sign") else label


def _center_margins(lp: LinearProgram, x: np.ndarray, lay: _Layout, method: str) -> np.ndarray:
    """Pick a balanced point on the optimal face.

    The cell LP is typically degenerate: margins of opposite walls trade off
    one for one, and a simplex vertex hands the whole budget to one side.
    Keeping the objective at its optimum, each margin is first pushed to its
    own extreme; then a common fraction ``t`` of those extremes is maximized.
    """
    cmin = lp.objective_for_min()
    opt = float(cmin @ x)
    tol = CENTER_TOL * max(1.0, abs(opt))
    G = np.vstack([lp.G, cmin])
    h = np.append(lp.h, opt + tol)
    idx = list(range(lay.sl["S_b"].start, lay.sl["S_b"].stop)) + [lay.sl["S_l"].start]
    free = []
    for j in idx:
        c = np.zeros(lp.n)
        c[j] = 1.0
        s = solve(LinearProgram(c, G, h, lp.E, lp.f, lp.lb), method)
        if s.status == "optimal" and -s.value > tol:
            free.append((j, -s.value))
    if not free:
        return x
    Gt = np.hstack([G, np.zeros((len(G), 1))])
    rows = np.zeros((len(free), lp.n + 1))
    for k, (j, best) in enumerate(free):
        rows[k, j] = 1.0
        rows[k, -1] = best
    c = np.zeros(lp.n + 1)
    c[-1] = -1.0
    Et = np.hstack([lp.E, np.zeros((len(lp.E), 1))])
    s = solve(LinearProgram(c, np.vstack([Gt, rows]), np.append(h, np.zeros(len(free))), Et, lp.f,
                            np.append(lp.lb, 0.0)), method)
    return s.x[:lp.n] if s.status == "optimal" else x


def synthesize_cell(prog: CellProgram, system: LinearSystem, method: str = "simplex",
                    verify: bool = True, center: bool = True) -> CellController:
    """Solve the cell LP and unpack, verify and return the controller.

    With ``center`` the returned optimum is the balanced point of the optimal
    face chosen by :func:`_center_margins` instead of the raw simplex vertex.

    Raises
    ------
    SynthesisError
        When the LP is infeasible (the message names the binding constraint
        family) or the vertex oracle rejects the returned gains.
    """
    lp = assemble_cell_lp(prog, system)
    sol = solve(lp, method)
    cid = prog.cell.id
    if sol.status == "infeasible":
        rows = sol.certificate.get("rows", [])
        fams = []
        for lab in rows:
            fam = _family(lab)
            if fam not in fams:
                fams.append(fam)
        fam = fams[0] if fams else None
        raise SynthesisError(
            f"cell {cid}: robust program infeasible (binding family: {fam}; involved: "
            f"{', '.join(fams[:6])}); try other weights, slower poles or wider input bounds",
            cid, fam, rows)
    if sol.status != "optimal":
        raise SynthesisError(f"cell {cid}: LP {sol.status}", cid)
    lay = _Layout(prog, system, len(state_polytope(prog.cell, system)[1]))
    x = _center_margins(lp, sol.x, lay, method) if center else sol.x
    K1 = x[lay.sl["K1"]].reshape(lay.n_u, lay.dn_l)
    K2 = x[lay.sl["K2"]].reshape(lay.n_u, lay.n_dyn)
    lambdas = {
        "barrier": x[lay.sl["lam_b"]].reshape(lay.s_h, lay.m_x),
        "clf": x[lay.sl["lam_l"]],
        "input": x[lay.sl["lam_u"]].reshape(lay.s_u, lay.m_x),
    }
    S_b = np.minimum(x[lay.sl["S_b"]], 0.0)
    S_l = min(float(x[lay.sl["S_l"]][0]), 0.0)
    value = float(lp.objective_for_min() @ x) * (1.0 if lp.sense == "min" else -1.0)
    ctrl = CellController(cid, K1, K2, S_b, S_l, value, prog.c_rows, prog.c_V,
                          prog.cell.landmark_ids, (prog.exit.kind, prog.exit.index), lambdas)
    if verify:
        vm = vertex_margins(K1, K2, prog, system)
        bad = []
        if np.any(vm["barrier"] > S_b + VERIFY_TOL):
            bad.append(f"cbf{np.nonzero(vm['barrier'] > S_b + VERIFY_TOL)[0].tolist()}")
        if vm["clf"] > S_l + VERIFY_TOL:
            bad.append("clf")
        if np.any(vm["input"] > VERIFY_TOL):
            bad.append("input")
        if bad:
            raise SynthesisError(f"cell {cid}: vertex oracle rejects gains ({', '.join(bad)})",
                                 cid, bad[0])
        ctrl.verification = {"barrier": vm["barrier"].tolist(), "clf": vm["clf"],
                             "input": vm["input"].tolist(), "tol": VERIFY_TOL}
    return ctrl


def inner_objectives(ctrl: CellController, prog: CellProgram, system: LinearSystem) -> dict:
    """State rows maximized by each inner problem, with the gains fixed."""
    Kx = ctrl.K_x(system)
    out = {"barrier": [], "clf": None, "input": []}
    for rw, r, c in zip(prog.rows, prog.reldeg, prog.c_rows):
        g = rw.A_h @ np.linalg.matrix_power(system.A, r - 1) @ system.B
        out["barrier"].append(-(_drift_row(rw.A_h, system, r, c) + g @ Kx))
    z, r = prog.exit.z, prog.r_V
    gz = z @ np.linalg.matrix_power(system.A, r - 1) @ system.B
    out["clf"] = _drift_row(z, system, r, prog.c_V) + gz @ Kx
    for j in range(len(system.b_u)):
        out["input"].append(system.A_u[j] @ Kx)
    return out


def inner_dual_values(ctrl: CellController, prog: CellProgram, system: LinearSystem,
                      method: str = "simplex") -> dict:
    """Optimal value of every inner dual at the synthesized gains."""
    A_x, b_x = state_polytope(prog.cell, system)
    objs = inner_objectives(ctrl, prog, system)

    def dual(cvec):
        sol = solve(dualize_max(cvec, A_x, b_x, check_bounded=False), method)
        return sol.value

    return {"barrier": np.array([dual(c) for c in objs["barrier"]]),
            "clf": dual(objs["clf"]),
            "input": np.array([dual(c) for c in objs["input"]])}


@dataclass
class SynthesisResult:
    controllers: dict
    failures: dict
    programs: dict = field(default_factory=dict, repr=False)

    @property
    def ok(self) -> bool:
        return not self.failures

    def margins_table(self) -> list[dict]:
        rows = []
        for cid in sorted(set(self.controllers) | set(self.failures)):
            if cid in self.controllers:
                c = self.controllers[cid]
                rows.append({"cell": cid, "S_l": c.S_l,
                             "min_S_b": float(np.min(c.S_b)) if len(c.S_b) else 0.0,
                             "objective": c.objective, "status": "ok"})
            else:
                rows.append({"cell": cid, "S_l": None, "min_S_b": None, "objective": None,
                             "status": str(self.failures[cid])})
        return rows


def synthesize_plan(env, system: LinearSystem, plan, c_b=(0.5,), c_V=(0.5,), w_b=1.0,
                    w_l: float = 1.0, method: str = "simplex", n_jobs: int = 1,
                    c_b_rows=None, center: bool = True) -> SynthesisResult:
    """Synthesize every cell of ``plan`` independently.

    Failures are collected per cell instead of aborting the remaining cells.
    """
    def one(cid):
        try:
            prog = make_program(env.cell(cid), system, plan.exits[cid], c_b, c_V, w_b, w_l,
                                c_b_rows)
            return cid, prog, synthesize_cell(prog, system, method, center=center)
        except (SynthesisError, ModelError) as exc:
            return cid, None, exc

    ids = sorted(plan.exits)
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(one, ids))
    else:
        results = [one(cid) for cid in ids]
    ctrls, fails, progs = {}, {}, {}
    for cid, prog, res in results:
        if isinstance(res, Exception):
            fails[cid] = res
        else:
            ctrls[cid] = res
            progs[cid] = prog
    return SynthesisResult(ctrls, fails, progs)


def observability_matrix(A, C) -> np.ndarray:
    n = A.shape[0]
    blocks = [C]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def check_stationary_point(ctrl: CellController, cell: ConvexCell, exit, system: LinearSystem,
                           tol: float = 1e-9) -> dict:
    """Certificate that the closed loop is at rest at the goal vertex.

    The rows of the position barriers active at the goal are stacked with
    ``z^T``; observability of ``(A, stack)`` is the sufficient condition for
    ``xdot = 0`` at the goal.  The residual ``||xdot||`` is evaluated both at
    ``x_dyn = 0`` and at the least-squares equilibrium ``x_dyn``.
    """
    spec = exit if isinstance(exit, ExitSpec) else exit_spec(cell, exit, system)
    if spec.kind != "point":
        raise ValueError("stationary-point check applies to goal-vertex exits only")
    g = spec.exit_vertices[0]
    xg = system.P_pos.T @ g
    rows = barrier_rows(cell, system, spec)
    active = [rw for rw in rows if rw.source == "pos" and abs(rw.value(xg)) <= tol * max(1.0, np.max(np.abs(g)))]
    A_h = np.array([rw.A_h for rw in active]).reshape(-1, system.n_x)
    C = np.vstack([A_h, spec.z[None, :]])
    O = observability_matrix(system.A, C)
    rank = int(np.linalg.matrix_rank(O))
    observable = rank == system.n_x
    cone = A_h @ spec.z
    M, q = ctrl.closed_loop(cell.landmarks, system)
    xd0 = M @ xg + q
    res0 = float(np.linalg.norm(xd0))
    if system.dyn_idx:
        Md = M @ system.P_dyn.T
        x_dyn = np.linalg.lstsq(Md, -(M @ xg + q), rcond=None)[0]
        res = float(np.linalg.norm(Md @ x_dyn + M @ xg + q))
    else:
        x_dyn = np.zeros(0)
        res = res0
    if not observable:
        warnings.warn(f"cell {cell.id}: (A, [A_h,exit; z^T]) is not observable (rank {rank})",
                      RuntimeWarning, stacklevel=2)
    return {"observable": observable, "rank": rank, "active_faces": [rw.face for rw in active],
            "cone_ok": bool(np.all(cone >= -1e-9)), "residual": res, "residual_dyn0": res0,
            "x_dyn": x_dyn.tolist()}
