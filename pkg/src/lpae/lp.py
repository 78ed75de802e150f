"""Linear programs in the form  max c'z  s.t.  Az <= b, z >= 0.

Contains the squared-hinge violation penalty and its gradient, a dense
tableau simplex solver (Bland's rule, two-phase when some b_j < 0) that also
returns duals, a KKT checker, a brute-force vertex enumerator used as a test
oracle, and a Frank-Wolfe Euclidean projection onto the feasible polytope.
"""
from __future__ import annotations

import enum
import io
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError, DomainError

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-6
MAX_ENUM_SIZE = 24


def _readonly(a):
    if a.dtype == np.float64 and not a.flags.writeable:
        return a
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """max c'z subject to Az <= b, z >= 0 (dense, float64, immutable)."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
            raise ContractError(f"A must be a non-empty matrix, got shape {A.shape}")
        m, n = A.shape
        if b.shape != (m,) or c.shape != (n,):
            raise ContractError(
                f"inconsistent shapes: A {A.shape}, b {b.shape}, c {c.shape}"
            )
        if not (np.isfinite(A).all() and np.isfinite(b).all() and np.isfinite(c).all()):
            raise DomainError("LP data must be finite")
        object.__setattr__(self, "A", _readonly(A))
        object.__setattr__(self, "b", _readonly(b))
        object.__setattr__(self, "c", _readonly(c))

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def __eq__(self, other):
        if not isinstance(other, LinearProgram):
            return NotImplemented
        return (
            np.array_equal(self.A, other.A)
            and np.array_equal(self.b, other.b)
            and np.array_equal(self.c, other.c)
        )

    def __hash__(self):
        return hash((self.A.tobytes(), self.b.tobytes(), self.c.tobytes()))

    def objective(self, z) -> float:
        return float(self.c @ np.asarray(z, dtype=np.float64))


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITER_LIMIT = "iter_limit"


@dataclass
class LpSolution:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    objective: float
    status: Status
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


# --------------------------------------------------------------------------
# Penalty machinery


def phi(u) -> float:
    """Squared hinge  sum_j max(0, u_j)^2."""
    u = np.asarray(u, dtype=np.float64)
    if not np.isfinite(u).all():
        raise DomainError("phi: input must be finite")
    r = np.maximum(u, 0.0)
    return float(r @ r) if r.ndim == 1 else float(np.sum(r * r))


def _check_z(lp: LinearProgram, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (lp.n,):
        raise ContractError(f"expected z of shape ({lp.n},), got {z.shape}")
    return z


def residual(lp: LinearProgram, z) -> np.ndarray:
    """Constraint residual Az - b (positive entries are violations)."""
    return lp.A @ _check_z(lp, z) - lp.b


def violation(lp: LinearProgram, z) -> float:
    return phi(residual(lp, z))


def violation_grad(lp: LinearProgram, z) -> np.ndarray:
    """Gradient 2 A' max(0, Az - b) of :func:`violation`."""
    return 2.0 * lp.A.T @ np.maximum(residual(lp, z), 0.0)


def is_feasible(lp: LinearProgram, z, tol: float = FEAS_TOL) -> bool:
    z = _check_z(lp, z)
    if tol < 0:
        raise ContractError("tol must be nonnegative")
    return bool(np.all(lp.A @ z <= lp.b + tol) and np.all(z >= -tol))


# --------------------------------------------------------------------------
# Simplex


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    colv = T[:, col].copy()
    colv[row] = 0.0
    T -= np.outer(colv, T[row])


def _iterate(T, basis, allowed, max_iters):
    """Run primal simplex pivots on ``T`` in place (Bland's rule).

    The last row of ``T`` holds reduced costs for a maximization; a column
    may enter when its reduced cost is negative.  Returns (status, iters).
    """
    m = T.shape[0] - 1
    iters = 0
    while True:
        red = T[-1, :allowed]
        candidates = np.flatnonzero(red < -PIVOT_TOL)
        if candidates.size == 0:
            return Status.OPTIMAL, iters
        if iters >= max_iters:
            return Status.ITER_LIMIT, iters
        col = int(candidates[0])
        colv = T[:m, col]
        rows = np.flatnonzero(colv > PIVOT_TOL)
        if rows.size == 0:
            return Status.UNBOUNDED, iters
        ratios = T[rows, -1] / colv[rows]
        best = ratios.min()
        ties = rows[ratios <= best + PIVOT_TOL * max(1.0, abs(best))]
        row = int(ties[np.argmin(basis[ties])])
        _pivot(T, row, col)
        basis[row] = col
        iters += 1


def _set_objective(T, basis, cost):
    m = T.shape[0] - 1
    T[-1, :] = cost[basis] @ T[:m, :]
    T[-1, :-1] -= cost


def solve_simplex(lp: LinearProgram, max_iters: int = 10_000) -> LpSolution:
    """Solve ``lp`` exactly with the dense tableau primal simplex method.

    Starts from the slack basis when b >= 0 and runs a phase-one problem on
    artificial variables otherwise.  Duals are read off the reduced costs of
    the slack columns in the final tableau.
    """
    if max_iters < 1:
        raise ContractError("max_iters must be >= 1")
    A, b, c = lp.A, lp.b, lp.c
    m, n = A.shape
    nan_x, nan_y = np.full(n, np.nan), np.full(m, np.nan)

    zero_rows = ~np.any(A != 0.0, axis=1)
    if np.any(b[zero_rows] < 0):
        return LpSolution(nan_x, nan_y, np.full(m, np.nan), -np.inf, Status.INFEASIBLE)

    flip = b < 0
    n_art = int(flip.sum())
    ncols = n + m + n_art
    T = np.zeros((m + 1, ncols + 1))
    sign = np.where(flip, -1.0, 1.0)
    T[:m, :n] = A * sign[:, None]
    T[:m, n:n + m] = np.diag(sign)
    T[:m, -1] = b * sign
    basis = np.arange(n, n + m)
    art_rows = np.flatnonzero(flip)
    for k, i in enumerate(art_rows):
        T[i, n + m + k] = 1.0
        basis[i] = n + m + k

    total_iters = 0
    if n_art:
        cost1 = np.zeros(ncols)
        cost1[n + m:] = -1.0
        _set_objective(T, basis, cost1)
        status, it = _iterate(T, basis, ncols, max_iters)
        total_iters += it
        if status is Status.ITER_LIMIT:
            return LpSolution(nan_x, nan_y, np.full(m, np.nan), np.nan, status, total_iters)
        if T[-1, -1] < -FEAS_TOL:
            return LpSolution(nan_x, nan_y, np.full(m, np.nan), -np.inf,
                              Status.INFEASIBLE, total_iters)
        # drive artificials still basic (at level zero) out of the basis
        for i in np.flatnonzero(basis >= n + m):
            nz = np.flatnonzero(np.abs(T[i, :n + m]) > PIVOT_TOL)
            if nz.size:
                _pivot(T, i, int(nz[0]))
                basis[i] = int(nz[0])

    cost = np.zeros(ncols)
    cost[:n] = c
    _set_objective(T, basis, cost)
    status, it = _iterate(T, basis, n + m, max(max_iters - total_iters, 1))
    total_iters += it

    x = np.zeros(n)
    is_x = basis < n
    x[basis[is_x]] = T[:m, -1][is_x]
    x = np.maximum(x, 0.0)
    y = T[-1, n:n + m].copy()
    s = b - A @ x
    if status is Status.UNBOUNDED:
        return LpSolution(x, nan_y, s, np.inf, status, total_iters)
    return LpSolution(x, y, s, float(c @ x), status, total_iters)


def check_kkt(lp: LinearProgram, x, y, tol: float = FEAS_TOL) -> bool:
    """True iff (x, y) satisfy the LP optimality (KKT) conditions within ``tol``.

    Checks primal feasibility, dual feasibility (A'y >= c, y >= 0) and both
    complementary-slackness products.
    """
    if tol <= 0:
        raise ContractError("tol must be positive")
    x = _check_z(lp, x)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (lp.m,):
        raise ContractError(f"expected y of shape ({lp.m},), got {y.shape}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        return False
    slack = lp.b - lp.A @ x
    reduced = lp.A.T @ y - lp.c
    return bool(
        np.all(slack >= -tol)
        and np.all(x >= -tol)
        and np.all(y >= -tol)
        and np.all(reduced >= -tol)
        and np.all(np.abs(y * slack) <= tol)
        and np.all(np.abs(reduced * x) <= tol)
    )


def enumerate_vertices(lp: LinearProgram, tol: float = 1e-9) -> list[np.ndarray]:
    """All basic feasible solutions of {Az <= b, z >= 0}, by brute force.

    Every choice of n tight constraints among the m + n inequalities is
    solved; feasible, distinct solutions are kept.  Meant as an oracle for
    small problems only.
    """
    m, n = lp.m, lp.n
    if m + n > MAX_ENUM_SIZE:
        raise ContractError(f"enumerate_vertices refuses m + n = {m + n} > {MAX_ENUM_SIZE}")
    G = np.vstack([lp.A, -np.eye(n)])
    h = np.concatenate([lp.b, np.zeros(n)])
    subsets = np.array(list(itertools.combinations(range(m + n), n)))
    Gs = G[subsets]
    hs = h[subsets]
    ok = np.abs(np.linalg.det(Gs)) > 1e-12
    ok[ok] = np.linalg.cond(Gs[ok]) < 1e12
    if not ok.any():
        return []
    Z = np.linalg.solve(Gs[ok], hs[ok][..., None])[..., 0]
    scale = 1.0 + np.abs(h).max()
    feas = np.all(Z @ G.T <= h + 1e-9 * scale, axis=1)
    verts: list[np.ndarray] = []
    for z in Z[feas]:
        z = np.where(np.abs(z) < tol, 0.0, z)
        if not any(np.max(np.abs(z - v)) <= tol * max(1.0, np.abs(v).max()) for v in verts):
            verts.append(z)
    return verts


# --------------------------------------------------------------------------
# Projection


@dataclass
class ProjectionResult:
    z: np.ndarray
    distances: list[float] = field(default_factory=list)
    gap: float = 0.0
    iterations: int = 0


def _lmo(lp: LinearProgram, direction) -> np.ndarray:
    """Vertex of the polytope maximizing ``direction'v``."""
    sol = solve_simplex(LinearProgram(lp.A, lp.b, direction))
    if not sol.optimal:
        raise ContractError(f"linear minimization oracle failed: {sol.status.value}")
    return sol.x


def frank_wolfe_projection(lp: LinearProgram, z0, max_iters: int = 500,
                           tol: float = 1e-6) -> ProjectionResult:
    """Frank-Wolfe with exact line search on ||z - z0||^2 over the polytope.

    Each iteration calls :func:`solve_simplex` as the linear minimization
    oracle.  Stops when the Frank-Wolfe duality gap drops below ``tol``.
    """
    if max_iters < 1:
        raise ContractError("max_iters must be >= 1")
    z0 = _check_z(lp, z0)
    if is_feasible(lp, z0, 0.0):
        return ProjectionResult(z0.copy(), [0.0], 0.0, 0)
    z = _lmo(lp, z0)
    d = z - z0
    dists = [float(np.sqrt(d @ d))]
    gap = np.inf
    k = 0
    for k in range(1, max_iters + 1):
        g = 2.0 * (z - z0)
        s = _lmo(lp, -g)
        step = z - s
        gap = float(g @ step)
        if gap < tol:
            break
        denom = 2.0 * float(step @ step)
        gamma = min(1.0, gap / denom) if denom > 0 else 0.0
        z = z - gamma * step
        d = z - z0
        dists.append(float(np.sqrt(d @ d)))
    return ProjectionResult(z, dists, gap, k)


def project_onto_polytope(lp: LinearProgram, z0, max_iters: int = 500,
                          tol: float = 1e-6) -> np.ndarray:
    """Approximate Euclidean projection of ``z0`` onto {Az <= b, z >= 0}."""
    return frank_wolfe_projection(lp, z0, max_iters, tol).z


# --------------------------------------------------------------------------
# Text format


def _fmt_row(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def format_lp(lp: LinearProgram) -> str:
    """Serialize as ``m n`` header, m rows of A, a row of b and a row of c."""
    lines = [f"{lp.m} {lp.n}"]
    lines.extend(_fmt_row(row) for row in lp.A)
    lines.append(_fmt_row(lp.b))
    lines.append(_fmt_row(lp.c))
    return "\n".join(lines) + "\n"


def _parse_row(line: str, width: int) -> list[float]:
    vals = [float(t) for t in line.split()]
    if len(vals) != width:
        raise ContractError(f"expected {width} values, got {len(vals)}: {line[:60]!r}")
    return vals


def read_lp_lines(lines: Sequence[str]) -> tuple[LinearProgram, int]:
    """Parse one LP from the start of ``lines``; return it and lines consumed."""
    try:
        m, n = (int(t) for t in lines[0].split())
    except (ValueError, IndexError) as exc:
        raise ContractError(f"bad LP header: {lines[:1]!r}") from exc
    if len(lines) < m + 3:
        raise ContractError("truncated LP block")
    A = [_parse_row(lines[1 + i], n) for i in range(m)]
    b = _parse_row(lines[1 + m], m)
    c = _parse_row(lines[2 + m], n)
    return LinearProgram(A, b, c), m + 3


def parse_lp(text: str) -> LinearProgram:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    lp, used = read_lp_lines(lines)
    if used != len(lines):
        raise ContractError("trailing content after LP block")
    return lp


def write_lp(lp: LinearProgram, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_lp(lp))


def read_lp(path) -> LinearProgram:
    with io.open(path, encoding="utf-8") as fh:
        return parse_lp(fh.read())
