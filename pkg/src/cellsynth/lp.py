"""Linear programs, a deterministic two-phase simplex and inner-max dualization.

The baseline solver is a dense tableau simplex with Bland's rule.  It is
slow compared with production codes but exact in its pivoting sequence, so
identical inputs always produce identical gains.  ``solve(lp, method="highs")``
routes through :func:`scipy.optimize.linprog` for cross-checks.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

PIVOT_TOL = 1e-9
REPORT_TOL = 1e-7
MAX_COND = 1e12
DROP_TOL = 1e-7
REFACTOR_EVERY = 20
RATIO_TOL = 1e-7


class LpError(RuntimeError):
    pass


class SingularBasisError(LpError):
    def __init__(self, cond):
        super().__init__(f"numerically singular basis (condition number {cond:.3e})")
        self.cond = cond


class UnboundedPolytopeError(ValueError):
    pass


@dataclass(frozen=True)
class LinearProgram:
    """``sense c.x`` subject to ``G x <= h``, ``E x = f`` and ``x_j >= lb_j``.

    ``lb`` entries are ``0`` or ``-inf``.  Row labels are carried through to
    infeasibility diagnostics.
    """

    c: np.ndarray
    G: np.ndarray | None = None
    h: np.ndarray | None = None
    E: np.ndarray | None = None
    f: np.ndarray | None = None
    lb: np.ndarray | None = None
    sense: str = "min"
    G_labels: tuple = ()
    E_labels: tuple = ()
    var_names: tuple = ()

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        n = len(c)
        G = np.zeros((0, n)) if self.G is None else np.asarray(self.G, dtype=float).reshape(-1, n)
        h = np.zeros(0) if self.h is None else np.asarray(self.h, dtype=float).reshape(-1)
        E = np.zeros((0, n)) if self.E is None else np.asarray(self.E, dtype=float).reshape(-1, n)
        f = np.zeros(0) if self.f is None else np.asarray(self.f, dtype=float).reshape(-1)
        lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(-1)
        if len(G) != len(h) or len(E) != len(f) or len(lb) != n:
            raise ValueError("inconsistent LP dimensions")
        if not all(np.all(np.isfinite(a)) for a in (c, G, h, E, f)):
            raise ValueError("LP coefficients must be finite")
        if not np.all((lb == 0) | np.isneginf(lb)):
            raise ValueError("variable lower bounds must be 0 or -inf")
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        for name, val in (("c", c), ("G", G), ("h", h), ("E", E), ("f", f), ("lb", lb)):
            object.__setattr__(self, name, val)
        if not self.G_labels:
            object.__setattr__(self, "G_labels", tuple(f"G{i}" for i in range(len(G))))
        if not self.E_labels:
            object.__setattr__(self, "E_labels", tuple(f"E{i}" for i in range(len(E))))

    @property
    def n(self) -> int:
        return len(self.c)

    def objective_for_min(self) -> np.ndarray:
        return self.c if self.sense == "min" else -self.c


@dataclass
class LpSolution:
    """Solver output.

    ``duals`` and ``eq_duals`` are multipliers of the minimization form
    (``max`` problems are negated first): ``c_min + G^T duals + E^T eq_duals``
    is nonnegative on sign-constrained variables and zero on free ones.
    For infeasible problems ``certificate`` holds Farkas weights on
    ``G`` and ``E`` rows.
    """

    status: str
    x: np.ndarray | None = None
    value: float | None = None
    duals: np.ndarray | None = None
    eq_duals: np.ndarray | None = None
    certificate: dict = field(default_factory=dict)
    pivots: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class _Standard:
    """``A x = b``, ``x >= 0`` image of a :class:`LinearProgram`."""

    def __init__(self, lp: LinearProgram):
        n = lp.n
        cols = []
        for j in range(n):
            cols.append((j, 1.0))
            if np.isneginf(lp.lb[j]):
                cols.append((j, -1.0))
        self.cols = cols
        nv = len(cols)
        mG, mE = len(lp.G), len(lp.E)
        m = mG + mE
        A = np.zeros((m, nv + mG))
        for k, (j, s) in enumerate(cols):
            A[:mG, k] = s * lp.G[:, j]
            A[mG:, k] = s * lp.E[:, j]
        A[:mG, nv:] = np.eye(mG)
        b = np.concatenate([lp.h, lp.f])
        sign = np.where(b < 0, -1.0, 1.0)
        self.A = A * sign[:, None]
        self.b = b * sign
        self.sign = sign
        cmin = lp.objective_for_min()
        self.cost = np.concatenate([[s * cmin[j] for j, s in cols], np.zeros(mG)])
        self.nv = nv
        self.mG = mG
        self.m = m

    def to_original(self, xs, n):
        x = np.zeros(n)
        for k, (j, s) in enumerate(self.cols):
            x[j] += s * xs[k]
        return x


def _pivot(T, rhs, d, r, j):
    piv = T[r, j]
    T[r] /= piv
    rhs[r] /= piv
    col = T[:, j].copy()
    col[r] = 0.0
    nz = np.nonzero(col)[0]
    if len(nz):
        T[nz] -= np.outer(col[nz], T[r])
        rhs[nz] -= col[nz] * rhs[r]
    if d is not None:
        dj = d[j]
        if dj != 0.0:
            d -= dj * T[r]
    T[nz, j] = 0.0
    T[r, j] = 1.0


def _bland(T, rhs, basis, cost, allowed, max_iter, A=None, b=None, every=REFACTOR_EVERY):
    """Minimize ``cost`` from a feasible tableau; returns (status, pivots).

    With ``A``/``b`` the tableau is rebuilt from the current basis every
    ``every`` pivots to keep roundoff from accumulating.
    """
    d = cost - cost[basis] @ T
    pivots = 0
    allowed_idx = np.nonzero(allowed)[0]
    while pivots < max_iter:
        cand = allowed_idx[d[allowed_idx] < -PIVOT_TOL]
        if len(cand) == 0:
            return "optimal", pivots
        j = int(cand[0])
        colj = T[:, j]
        rows = np.nonzero(colj > RATIO_TOL * max(1.0, float(np.max(np.abs(colj)))))[0]
        if len(rows) == 0:
            rows = np.nonzero(colj > PIVOT_TOL)[0]
        if len(rows) == 0:
            return "unbounded", pivots
        ratios = rhs[rows] / colj[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
        r = int(ties[np.argmin(np.asarray(basis)[ties])])
        _pivot(T, rhs, d, r, j)
        basis[r] = j
        pivots += 1
        if A is not None and pivots % every == 0:
            T[:], rhs[:] = _refactor(A, b, basis)
            np.maximum(rhs, 0.0, out=rhs)
            d = cost - cost[basis] @ T
    raise LpError(f"simplex iteration limit {max_iter} reached")


def _refactor(A, b, basis):
    B = A[:, basis]
    cond = np.linalg.cond(B)
    if not np.isfinite(cond) or cond > MAX_COND:
        raise SingularBasisError(cond)
    T = np.linalg.solve(B, A)
    rhs = np.linalg.solve(B, b)
    return T, rhs


class SimplexSolver:
    """Dense two-phase simplex with Bland's anti-cycling rule."""

    def __init__(self, max_iter: int = 50000):
        self.max_iter = max_iter

    def solve(self, lp: LinearProgram) -> LpSolution:
        st = _Standard(lp)
        m, N = st.A.shape
        if m == 0:
            return self._no_rows(lp, st)
        # phase 1: slacks start basic where possible, artificials elsewhere
        art_rows = [i for i in range(m) if not (i < st.mG and st.sign[i] > 0)]
        n_art = len(art_rows)
        A1 = np.hstack([st.A, np.zeros((m, n_art))])
        basis = []
        k = 0
        for i in range(m):
            if i < st.mG and st.sign[i] > 0:
                basis.append(st.nv + i)
            else:
                A1[i, N + k] = 1.0
                basis.append(N + k)
                k += 1
        T = A1.copy()
        rhs = st.b.copy()
        cost1 = np.concatenate([np.zeros(N), np.ones(n_art)])
        allowed = np.ones(N + n_art, dtype=bool)
        status, piv1 = _bland(T, rhs, basis, cost1, allowed, self.max_iter, A1, st.b)
        scale = max(1.0, float(np.max(np.abs(st.b))))
        infeas = float(cost1[basis] @ rhs)
        if infeas > 1e-8 * scale:
            y = np.linalg.lstsq(A1[:, basis].T, cost1[basis], rcond=None)[0]
            # Farkas vector: w >= 0 on G rows, w.[G; E] >= 0 (= 0 on free columns), w.[h; f] < 0
            w = -y * st.sign
            return LpSolution("infeasible", certificate=self._certificate(lp, st, w), pivots=piv1)
        # drive remaining artificials out of the basis
        keep = list(range(m))
        for r in range(m):
            if basis[r] >= N:
                row = np.abs(T[r, :N])
                j = int(np.argmax(row))
                if row[j] > DROP_TOL:
                    _pivot(T, rhs, None, r, j)
                    basis[r] = j
                else:
                    keep.remove(r)
        T = T[keep][:, :N]
        rhs = rhs[keep]
        basis = [basis[r] for r in keep]
        A = st.A[keep]
        b = st.b[keep]
        allowed = np.ones(N, dtype=bool)
        pivots = piv1
        for _ in range(20):
            status, p = _bland(T, rhs, basis, st.cost, allowed, self.max_iter, A, b)
            pivots += p
            if status == "unbounded":
                return LpSolution("unbounded", pivots=pivots)
            T, rhs = _refactor(A, b, basis)
            d = st.cost - st.cost[basis] @ T
            if np.min(rhs) >= -1e-9 * scale and np.min(d) >= -PIVOT_TOL:
                break
            if np.min(rhs) < -REPORT_TOL * scale:
                raise LpError("basis lost primal feasibility after refactorization "
                              f"(min rhs {np.min(rhs):.3e})")
            rhs = np.maximum(rhs, 0.0)
            if np.min(d) >= -PIVOT_TOL:
                break
        xs = np.zeros(N)
        xs[basis] = np.maximum(rhs, 0.0)
        x = st.to_original(xs, lp.n)
        B = A[:, basis]
        y_kept = np.linalg.solve(B.T, st.cost[basis])
        y = np.zeros(m)
        y[keep] = y_kept
        mult = -y * st.sign
        duals = np.maximum(mult[:st.mG], 0.0)
        eq_duals = mult[st.mG:]
        return LpSolution("optimal", x, float(lp.c @ x), duals, eq_duals, pivots=pivots)

    def _no_rows(self, lp, st):
        cmin = lp.objective_for_min()
        free = np.isneginf(lp.lb)
        if np.any(cmin[free] != 0) or np.any(cmin[~free] < 0):
            return LpSolution("unbounded")
        x = np.zeros(lp.n)
        return LpSolution("optimal", x, 0.0, np.zeros(0), np.zeros(0))

    @staticmethod
    def _certificate(lp, st, w):
        labels = list(lp.G_labels) + list(lp.E_labels)
        mag = np.abs(w)
        top = mag.max() if len(mag) else 0.0
        rows = [labels[i] for i in np.argsort(-mag, kind="stable") if mag[i] > 1e-9 * max(1.0, top)]
        return {"weights": w.tolist(), "rows": rows}


class HighsSolver:
    """Alternative backend through scipy's HiGHS interface."""

    def solve(self, lp: LinearProgram) -> LpSolution:
        from scipy.optimize import linprog

        cmin = lp.objective_for_min()
        bounds = [(None if np.isneginf(l) else 0.0, None) for l in lp.lb]
        res = linprog(
            cmin,
            A_ub=lp.G if len(lp.G) else None, b_ub=lp.h if len(lp.h) else None,
            A_eq=lp.E if len(lp.E) else None, b_eq=lp.f if len(lp.f) else None,
            bounds=bounds, method="highs",
        )
        if res.status == 2:
            return LpSolution("infeasible")
        if res.status == 3:
            return LpSolution("unbounded")
        if res.status != 0:
            raise LpError(f"HiGHS failed: {res.message}")
        duals = -res.ineqlin.marginals if len(lp.G) else np.zeros(0)
        eq = -res.eqlin.marginals if len(lp.E) else np.zeros(0)
        x = np.asarray(res.x)
        return LpSolution("optimal", x, float(lp.c @ x), duals, eq)


_SOLVERS = {"simplex": SimplexSolver, "highs": HighsSolver}


def solve(lp: LinearProgram, method: str = "simplex") -> LpSolution:
    """Solve ``lp`` with the named backend (``"simplex"`` or ``"highs"``)."""
    try:
        solver = _SOLVERS[method]()
    except KeyError:
        raise ValueError(f"unknown LP method {method!r}") from None
    return solver.solve(lp)


def kkt_residuals(lp: LinearProgram, sol: LpSolution) -> dict:
    """Primal, dual and complementarity residuals of an optimal solution."""
    x = sol.x
    cmin = lp.objective_for_min()
    slack = lp.h - lp.G @ x
    primal = max(
        float(np.max(-slack, initial=0.0)),
        float(np.max(np.abs(lp.E @ x - lp.f), initial=0.0)),
        float(np.max(-x[lp.lb == 0], initial=0.0)),
    )
    rho = cmin + lp.G.T @ sol.duals + lp.E.T @ sol.eq_duals
    free = np.isneginf(lp.lb)
    stationarity = max(float(np.max(np.abs(rho[free]), initial=0.0)),
                       float(np.max(-rho[~free], initial=0.0)))
    comp = max(float(np.max(np.abs(sol.duals * slack), initial=0.0)),
               float(np.max(np.abs(rho[~free] * x[~free]), initial=0.0)))
    return {"primal": primal, "dual_sign": float(np.max(-sol.duals, initial=0.0)),
            "stationarity": stationarity, "complementarity": comp}


def polytope_is_bounded(A, b) -> bool:
    """``{x : A x <= b}`` (assumed nonempty) is bounded iff its recession cone is ``{0}``."""
    A = np.asarray(A, dtype=float)
    if len(A) == 0:
        return False
    n = A.shape[1]
    G = np.vstack([A, np.eye(n), -np.eye(n)])
    h = np.concatenate([np.zeros(len(A)), np.ones(2 * n)])
    for k in range(n):
        for s in (1.0, -1.0):
            c = np.zeros(n)
            c[k] = s
            sol = SimplexSolver().solve(LinearProgram(c, G, h, sense="max"))
            if not sol.optimal or sol.value > 1e-9:
                return False
    return True


def dualize_max(c, A, b, check_bounded: bool = True) -> LinearProgram:
    """Dual of ``max c.x s.t. A x <= b``: ``min b.lam s.t. A^T lam = c, lam >= 0``."""
    c = np.asarray(c, dtype=float).reshape(-1)
    A = np.asarray(A, dtype=float).reshape(-1, len(c))
    b = np.asarray(b, dtype=float).reshape(-1)
    if check_bounded and not polytope_is_bounded(A, b):
        raise UnboundedPolytopeError(
            "inner maximization domain is unbounded; add bounds on the dynamic state"
        )
    m = len(A)
    return LinearProgram(b, E=A.T, f=c, lb=np.zeros(m), sense="min",
                         var_names=tuple(f"lam{i}" for i in range(m)))


def polytope_vertices(A, b, tol: float = 1e-9) -> np.ndarray:
    """Brute-force vertex enumeration of a bounded polytope.

    Every ``n``-subset of rows is solved as an equality system; feasible,
    nonsingular solutions are kept and deduplicated.  Exponential in the
    number of rows, intended as an independent oracle on small problems.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    scale = max(1.0, float(np.max(np.abs(b))))
    found = []
    for rows in itertools.combinations(range(m), n):
        M = A[list(rows)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, b[list(rows)])
        if np.all(A @ x <= b + tol * scale):
            if not any(np.linalg.norm(x - y) <= 1e-7 * scale for y in found):
                found.append(x)
    return np.array(found).reshape(-1, n)


def dump_lp(lp: LinearProgram, precision: int = 6) -> str:
    """Human-readable listing of an LP for debugging."""
    names = lp.var_names or tuple(f"x{j}" for j in range(lp.n))

    def expr(row):
        terms = [f"{v:+.{precision}g}*{names[j]}" for j, v in enumerate(row) if v != 0]
        return " ".join(terms) if terms else "0"

    lines = [f"{lp.sense} {expr(lp.c)}", "subject to"]
    for lab, row, rhs in zip(lp.G_labels, lp.G, lp.h):
        lines.append(f"  [{lab}] {expr(row)} <= {rhs:.{precision}g}")
    for lab, row, rhs in zip(lp.E_labels, lp.E, lp.f):
        lines.append(f"  [{lab}] {expr(row)} = {rhs:.{precision}g}")
    boxed = [names[j] for j in range(lp.n) if lp.lb[j] == 0]
    if boxed:
        lines.append("nonnegative: " + ", ".join(boxed))
    return "\n".join(lines) + "\n"
