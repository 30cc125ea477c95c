"""Linear agent models, affine barrier rows and transversal coefficients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RELDEG_TOL = 1e-12


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class LinearSystem:
    """``xdot = A x + B u`` with polytopic bounds on ``x_dyn`` and ``u``.

    ``pos_idx`` lists the state coordinates holding the position; the rest
    form ``x_dyn``.  ``A_dyn x <= b_dyn`` is written over the full state but
    may only involve dynamic coordinates.
    """

    A: np.ndarray
    B: np.ndarray
    pos_idx: tuple
    A_dyn: np.ndarray
    b_dyn: np.ndarray
    A_u: np.ndarray
    b_u: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n:
            raise ModelError("A must be n x n and B n x m")
        A_dyn = np.asarray(self.A_dyn, dtype=float).reshape(-1, n)
        b_dyn = np.asarray(self.b_dyn, dtype=float).reshape(-1)
        A_u = np.asarray(self.A_u, dtype=float).reshape(-1, B.shape[1])
        b_u = np.asarray(self.b_u, dtype=float).reshape(-1)
        if len(A_dyn) != len(b_dyn) or len(A_u) != len(b_u):
            raise ModelError("bound matrices and offsets disagree in length")
        pos = tuple(int(i) for i in self.pos_idx)
        if len(set(pos)) != len(pos) or not all(0 <= i < n for i in pos):
            raise ModelError("pos_idx must be distinct state indices")
        for name, val in (("A", A), ("B", B), ("A_dyn", A_dyn), ("A_u", A_u)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        for name, val in (("b_dyn", b_dyn), ("b_u", b_u)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "pos_idx", pos)
        if len(A_dyn) and np.any(np.abs(A_dyn[:, list(pos)]) > 0):
            raise ModelError("dynamic bounds must not involve position coordinates")
        if len(A_dyn) and np.any(b_dyn < 0):
            raise ModelError("dynamic bounds must contain 0")
        if np.any(b_u < 0):
            raise ModelError("input bounds must contain 0")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def d(self) -> int:
        return len(self.pos_idx)

    @property
    def dyn_idx(self) -> tuple:
        return tuple(i for i in range(self.n_x) if i not in self.pos_idx)

    @property
    def P_pos(self) -> np.ndarray:
        return np.eye(self.n_x)[list(self.pos_idx)]

    @property
    def P_dyn(self) -> np.ndarray:
        return np.eye(self.n_x)[list(self.dyn_idx)]

    def controllability_rank(self) -> int:
        blocks = [self.B]
        for _ in range(self.n_x - 1):
            blocks.append(self.A @ blocks[-1])
        return int(np.linalg.matrix_rank(np.hstack(blocks)))

    def is_controllable(self) -> bool:
        return self.controllability_rank() == self.n_x

    def flow(self, x, u) -> np.ndarray:
        return self.A @ x + self.B @ u

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(), "B": self.B.tolist(), "pos_idx": list(self.pos_idx),
            "A_dyn": self.A_dyn.tolist(), "b_dyn": self.b_dyn.tolist(),
            "A_u": self.A_u.tolist(), "b_u": self.b_u.tolist(),
        }

    @classmethod
    def from_dict(cls, data) -> "LinearSystem":
        n = len(data["A"])
        m = len(data["B"][0])
        return cls(
            np.array(data["A"], dtype=float), np.array(data["B"], dtype=float),
            tuple(data["pos_idx"]),
            np.array(data.get("A_dyn", []), dtype=float).reshape(-1, n),
            np.array(data.get("b_dyn", []), dtype=float),
            np.array(data["A_u"], dtype=float).reshape(-1, m),
            np.array(data["b_u"], dtype=float),
        )


def box(n: int, bound) -> tuple[np.ndarray, np.ndarray]:
    """``|x_i| <= bound_i`` as ``A x <= b`` (rows +e_0, -e_0, +e_1, ...)."""
    bound = np.broadcast_to(np.asarray(bound, dtype=float), (n,))
    A = np.zeros((2 * n, n))
    for i in range(n):
        A[2 * i, i] = 1.0
        A[2 * i + 1, i] = -1.0
    return A, np.repeat(bound, 2)


def single_integrator(d: int = 2, u_max=1.0) -> LinearSystem:
    A_u, b_u = box(d, u_max)
    return LinearSystem(np.zeros((d, d)), np.eye(d), tuple(range(d)),
                        np.zeros((0, d)), np.zeros(0), A_u, b_u)


def double_integrator(d: int = 2, v_max=1.0, u_max=1.0) -> LinearSystem:
    """State ``[p; v]`` with ``pdot = v``, ``vdot = u`` and a velocity box."""
    n = 2 * d
    A = np.zeros((n, n))
    A[:d, d:] = np.eye(d)
    B = np.vstack([np.zeros((d, d)), np.eye(d)])
    Av, bv = box(d, v_max)
    A_dyn = np.hstack([np.zeros((2 * d, d)), Av])
    A_u, b_u = box(d, u_max)
    return LinearSystem(A, B, tuple(range(d)), A_dyn, bv, A_u, b_u)


@dataclass(frozen=True)
class BarrierRow:
    """Affine barrier ``h(x) = A_h x + b_h`` (nonnegative on the safe side)."""

    A_h: np.ndarray
    b_h: float
    source: str = "pos"
    face: int = -1

    def value(self, x) -> float:
        return float(self.A_h @ np.asarray(x, dtype=float) + self.b_h)


def relative_degree(row, system: LinearSystem, tol: float = RELDEG_TOL) -> int:
    """Smallest ``r >= 1`` with ``row A^(r-1) B != 0``."""
    a = np.asarray(row, dtype=float).reshape(-1)
    v = a.copy()
    for r in range(1, system.n_x + 1):
        if np.max(np.abs(v @ system.B)) > tol:
            return r
        v = v @ system.A
    raise ModelError("row has no finite relative degree (uncontrollable direction)")


def barrier_rows(cell, system: LinearSystem, exit) -> list[BarrierRow]:
    """Barrier rows for every non-exit face plus every dynamic bound.

    Face rows ``a . p <= b`` become ``h = b - a . P_pos x``.  A point exit
    keeps every face.  Dynamic rows ``A_dyn x <= b_dyn`` become
    ``h = b_dyn - A_dyn x``.
    """
    P = system.P_pos
    rows = []
    skip = exit.index if exit.kind == "face" else None
    for k, hs in enumerate(cell.halfspaces):
        if k == skip:
            continue
        A_h = -hs.normal @ P
        if np.linalg.norm(A_h) < 1e-14:
            raise ModelError(f"face {k} projects to a zero row")
        rows.append(BarrierRow(A_h, hs.offset, "pos", k))
    for k in range(len(system.A_dyn)):
        A_h = -system.A_dyn[k]
        if np.linalg.norm(A_h) < 1e-14:
            raise ModelError(f"dynamic bound {k} is a zero row")
        rows.append(BarrierRow(A_h.copy(), float(system.b_dyn[k]), "dyn", k))
    return rows


def companion(c) -> np.ndarray:
    """``F - G c^T`` for the transversal chain of integrators."""
    c = np.asarray(c, dtype=float).reshape(-1)
    r = len(c)
    M = np.zeros((r, r))
    M[:-1, 1:] = np.eye(r - 1)
    M[-1, :] = -c
    return M


def is_hurwitz(c) -> bool:
    return bool(np.all(np.linalg.eigvals(companion(c)).real < 0))


@dataclass(frozen=True)
class TransversalCoeffs:
    """``c`` multiplies ``xi = [h, hdot, ..., h^(r-1)]`` as ``c_1 h + c_2 hdot + ...``."""

    c: np.ndarray
    poles: tuple | None = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        if len(c) == 0:
            raise ModelError("empty coefficient vector")
        if not is_hurwitz(c):
            raise ModelError(f"coefficients {c.tolist()} do not stabilize the transversal chain")
        object.__setattr__(self, "c", c)

    @property
    def r(self) -> int:
        return len(self.c)


def coeffs_from_poles(poles) -> TransversalCoeffs:
    """Coefficients whose chain has characteristic polynomial ``prod(s + p_i)``."""
    poles = tuple(float(p) for p in np.atleast_1d(poles))
    if any(p <= 0 for p in poles):
        raise ModelError("poles must be positive")
    # np.poly gives [1, e1, ..., er] for roots -p_i; c_1 is the constant term
    coeffs = np.real(np.poly([-p for p in poles]))[1:]
    return TransversalCoeffs(coeffs[::-1].copy(), poles)


def lie_rows(row, system: LinearSystem, upto: int) -> np.ndarray:
    """Rows ``row A^j`` for ``j = 0..upto`` (drift Lie derivatives of an affine h)."""
    a = np.asarray(row, dtype=float).reshape(-1)
    out = [a]
    for _ in range(upto):
        out.append(out[-1] @ system.A)
    return np.array(out)
