"""Conic-program representation and solver front end.

A :class:`ConicProgram` is a solver-agnostic description of a convex program

    minimize    c . x  +  sum_j  w_j ||M_j x - d_j||^2
    subject to  A x = b
                x_i >= 0                    for i in the nonnegative list
                ||V_k x + v_k|| <= t_k . x + t0_k    for each cone block

Quadratic objective terms are kept in factor form (weight, M, d) so convexity
is structural; at solve time each one is rewritten as a second-order-cone
epigraph so a single cone solver handles everything.  Constraint matrices are
stored as raw triplets and assembled into one sparse matrix per solve, which
keeps repeated small solves (the receding-horizon policies) cheap.

The back end is the Clarabel interior-point solver; its output is mapped onto
the :class:`SolveResult` contract (status, primal values by variable name,
objective, iterations, residuals) and is deterministic for a fixed program.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.special import ndtri

import clarabel

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_UNBOUNDED = "unbounded"
STATUS_NUMERICAL = "numerical-limit"


def normal_quantile(p: float) -> float:
    """Standard normal quantile (inverse CDF) for p in (0, 1)."""
    if not 0.0 < p < 1.0:
        raise ValueError("quantile argument must lie strictly between 0 and 1")
    return float(ndtri(p))


def psd_sqrt(S: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Symmetric PSD square root; small negative eigenvalues are clipped."""
    S = np.asarray(S, dtype=float)
    w, U = np.linalg.eigh((S + S.T) / 2.0)
    scale = max(abs(w).max(initial=0.0), 1.0)
    if w.min(initial=0.0) < -tol * scale:
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {w.min():.3e})")
    return (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T


@dataclass
class QuadTerm:
    """Objective term ``weight * ||M x - d||^2`` with M in triplet form."""

    weight: float
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    nrows: int
    d: np.ndarray
    label: str = ""
    _M: sparse.csr_matrix | None = field(default=None, repr=False, compare=False)

    def matrix(self, num_vars: int) -> sparse.csr_matrix:
        if self._M is None:
            self._M = sparse.csr_matrix(
                (self.vals, (self.rows, self.cols)), shape=(self.nrows, num_vars)
            )
        return self._M


@dataclass
class SocBlock:
    """Constraint ``||V x + v0||_2 <= t_coef . x + t0``, in triplet form."""

    t_cols: np.ndarray
    t_vals: np.ndarray
    t0: float
    v_rows: np.ndarray
    v_cols: np.ndarray
    v_vals: np.ndarray
    v_dim: int
    v0: np.ndarray
    label: str = ""

    def evaluate(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        """(scalar side, vector side) of the cone at a point."""
        t = self.t0 + float(self.t_vals @ x[self.t_cols])
        v = self.v0.copy()
        np.add.at(v, self.v_rows, self.v_vals * x[self.v_cols])
        return t, v

    def margin(self, x: np.ndarray) -> float:
        """t - ||v||; nonnegative iff the constraint holds at x."""
        t, v = self.evaluate(x)
        return t - float(np.linalg.norm(v))


@dataclass
class ConicProgram:
    """Language-agnostic convex-program description. See module docstring."""

    num_vars: int
    c: np.ndarray
    quad_terms: list[QuadTerm]
    eq_rows: np.ndarray
    eq_cols: np.ndarray
    eq_vals: np.ndarray
    eq_b: np.ndarray
    nonneg: np.ndarray
    soc_blocks: list[SocBlock]
    var_names: dict[str, np.ndarray]

    @property
    def num_eq(self) -> int:
        return len(self.eq_b)

    def eq_matrix(self) -> sparse.csr_matrix:
        return sparse.csr_matrix(
            (self.eq_vals, (self.eq_rows, self.eq_cols)), shape=(self.num_eq, self.num_vars)
        )

    def validate(self) -> None:
        """Structural convexity audit; raises ValueError on any defect."""
        n = self.num_vars
        if self.c.shape != (n,):
            raise ValueError("objective coefficient length mismatch")

        def check_cols(cols, what):
            if len(cols) and (cols.min() < 0 or cols.max() >= n):
                raise ValueError(f"{what} references a variable out of range")

        check_cols(self.eq_cols, "equality constraint")
        check_cols(self.nonneg, "nonnegativity list")
        if len(np.unique(self.nonneg)) != len(self.nonneg):
            raise ValueError("duplicate nonnegativity indices")
        if len(self.eq_rows) and self.eq_rows.max() >= self.num_eq:
            raise ValueError("equality row index out of range")
        for q in self.quad_terms:
            if q.weight < 0:
                raise ValueError(f"quadratic term {q.label!r} has negative weight")
            check_cols(q.cols, f"quadratic term {q.label!r}")
            if len(q.d) != q.nrows:
                raise ValueError(f"quadratic term {q.label!r} offset length mismatch")
        for blk in self.soc_blocks:
            check_cols(blk.t_cols, f"cone block {blk.label!r}")
            check_cols(blk.v_cols, f"cone block {blk.label!r}")
            if len(blk.v0) != blk.v_dim:
                raise ValueError(f"cone block {blk.label!r} offset length mismatch")

    def objective_value(self, x: np.ndarray) -> float:
        val = float(self.c @ x)
        for q in self.quad_terms:
            r = q.matrix(self.num_vars) @ x - q.d
            val += q.weight * float(r @ r)
        return val


@dataclass
class SolveResult:
    """Solver output. ``primal`` maps variable names to value arrays."""

    status: str
    primal: dict[str, np.ndarray]
    objective: float
    iterations: int
    residuals: dict[str, float]
    solve_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OPTIMAL

    def value(self, name: str) -> np.ndarray:
        return self.primal[name]


class ProgramBuilder:
    """Incrementally assembles a :class:`ConicProgram`.

    Variables are registered as named blocks and referenced through the
    returned index arrays; constraints are accumulated as sparse triplets so
    builders stay vectorized.
    """

    def __init__(self):
        self._num_vars = 0
        self._names: dict[str, np.ndarray] = {}
        self._cost: list[tuple[np.ndarray, np.ndarray]] = []
        self._eq: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self._eq_rhs: list[np.ndarray] = []
        self._eq_count = 0
        self._nonneg: list[np.ndarray] = []
        self._quads: list[QuadTerm] = []
        self._socs: list[SocBlock] = []

    def new_vars(self, name: str, size: int) -> np.ndarray:
        if name in self._names:
            raise ValueError(f"duplicate variable block {name!r}")
        idx = np.arange(self._num_vars, self._num_vars + size)
        self._num_vars += size
        self._names[name] = idx
        return idx

    def add_cost(self, cols, vals) -> None:
        cols = np.atleast_1d(cols)
        vals = np.broadcast_to(np.asarray(vals, dtype=float), cols.shape)
        self._cost.append((cols, vals))

    def add_eq(self, rows, cols, vals, rhs) -> None:
        """Equality rows given as relative-row triplets plus a rhs vector."""
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        rows = np.atleast_1d(rows) + self._eq_count
        self._eq.append((rows, np.atleast_1d(cols),
                         np.atleast_1d(np.asarray(vals, dtype=float))))
        self._eq_rhs.append(rhs)
        self._eq_count += len(rhs)

    def add_eq_row(self, cols, vals, rhs: float) -> None:
        cols = np.atleast_1d(cols)
        self.add_eq(np.zeros(len(cols), dtype=int), cols, vals, [rhs])

    def add_nonneg(self, idx) -> None:
        self._nonneg.append(np.atleast_1d(idx))

    def add_quad(self, weight: float, rows, cols, vals, nrows: int, d, label: str = "") -> None:
        self._quads.append(QuadTerm(
            weight=float(weight), rows=np.atleast_1d(rows), cols=np.atleast_1d(cols),
            vals=np.atleast_1d(np.asarray(vals, dtype=float)), nrows=int(nrows),
            d=np.asarray(d, dtype=float), label=label,
        ))

    def add_soc(self, t_cols, t_vals, t0, v_rows, v_cols, v_vals, v_dim, v0,
                label: str = "") -> None:
        self._socs.append(SocBlock(
            t_cols=np.atleast_1d(t_cols),
            t_vals=np.atleast_1d(np.asarray(t_vals, dtype=float)),
            t0=float(t0),
            v_rows=np.atleast_1d(v_rows),
            v_cols=np.atleast_1d(v_cols),
            v_vals=np.atleast_1d(np.asarray(v_vals, dtype=float)),
            v_dim=int(v_dim),
            v0=np.asarray(v0, dtype=float),
            label=label,
        ))

    def build(self) -> ConicProgram:
        n = self._num_vars
        c = np.zeros(n)
        for cols, vals in self._cost:
            np.add.at(c, cols, vals)
        if self._eq:
            eq_rows = np.concatenate([r for r, _, _ in self._eq])
            eq_cols = np.concatenate([cc for _, cc, _ in self._eq])
            eq_vals = np.concatenate([v for _, _, v in self._eq])
            eq_b = np.concatenate(self._eq_rhs)
        else:
            eq_rows = eq_cols = np.zeros(0, dtype=int)
            eq_vals = eq_b = np.zeros(0)
        nonneg = (np.unique(np.concatenate(self._nonneg))
                  if self._nonneg else np.zeros(0, dtype=int))
        prog = ConicProgram(
            num_vars=n, c=c, quad_terms=self._quads,
            eq_rows=eq_rows, eq_cols=eq_cols, eq_vals=eq_vals, eq_b=eq_b,
            nonneg=nonneg, soc_blocks=self._socs, var_names=dict(self._names),
        )
        prog.validate()
        return prog


_STATUS_MAP = {
    "Solved": STATUS_OPTIMAL,
    "PrimalInfeasible": STATUS_INFEASIBLE,
    "AlmostPrimalInfeasible": STATUS_INFEASIBLE,
    "DualInfeasible": STATUS_UNBOUNDED,
    "AlmostDualInfeasible": STATUS_UNBOUNDED,
}


def solve(prog: ConicProgram, tol: float = DEFAULT_TOL,
          max_iter: int = DEFAULT_MAX_ITER) -> SolveResult:
    """Solve a :class:`ConicProgram`; never raises on solver non-convergence.

    Iteration-capped or numerically stuck solves surface as status
    "numerical-limit" with the last iterate's values attached.
    """
    n = prog.num_vars
    n_quad = len(prog.quad_terms)
    n_tot = n + n_quad

    q = np.zeros(n_tot)
    q[:n] = prog.c
    for j, term in enumerate(prog.quad_terms):
        q[n + j] = term.weight

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    rhs: list[np.ndarray] = []
    cones = []
    offset = 0

    if prog.num_eq:
        rows.append(prog.eq_rows)
        cols.append(prog.eq_cols)
        vals.append(prog.eq_vals)
        rhs.append(prog.eq_b)
        cones.append(clarabel.ZeroConeT(prog.num_eq))
        offset += prog.num_eq
    if len(prog.nonneg):
        k = len(prog.nonneg)
        rows.append(np.arange(k) + offset)
        cols.append(prog.nonneg)
        vals.append(np.full(k, -1.0))
        rhs.append(np.zeros(k))
        cones.append(clarabel.NonnegativeConeT(k))
        offset += k
    for blk in prog.soc_blocks:
        # s = (t_coef.x + t0, V x + v0) in SOC  ->  A rows = -(t_coef; V), b = (t0; v0)
        rows.append(np.full(len(blk.t_cols), offset))
        cols.append(blk.t_cols)
        vals.append(-blk.t_vals)
        rows.append(blk.v_rows + offset + 1)
        cols.append(blk.v_cols)
        vals.append(-blk.v_vals)
        rhs.append(np.concatenate([[blk.t0], blk.v0]))
        cones.append(clarabel.SecondOrderConeT(1 + blk.v_dim))
        offset += 1 + blk.v_dim
    for j, term in enumerate(prog.quad_terms):
        # ||M x - d||^2 <= r  <=>  ||(1 - r, 2 M x - 2 d)|| <= 1 + r
        r_col = n + j
        rows.append(np.array([offset, offset + 1]))
        cols.append(np.array([r_col, r_col]))
        vals.append(np.array([-1.0, 1.0]))
        rows.append(term.rows + offset + 2)
        cols.append(term.cols)
        vals.append(-2.0 * term.vals)
        rhs.append(np.concatenate([[1.0], [1.0], -2.0 * term.d]))
        cones.append(clarabel.SecondOrderConeT(2 + term.nrows))
        offset += 2 + term.nrows

    if rows:
        A = sparse.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(offset, n_tot),
        )
        b = np.concatenate(rhs)
    else:
        A = sparse.csc_matrix((0, n_tot))
        b = np.zeros(0)

    P = sparse.csc_matrix((n_tot, n_tot))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.max_threads = 1
    settings.tol_feas = tol
    settings.tol_gap_rel = tol
    settings.tol_gap_abs = tol
    solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
    sol = solver.solve()

    status = _STATUS_MAP.get(str(sol.status), STATUS_NUMERICAL)
    residuals = {"primal": float(sol.r_prim), "dual": float(sol.r_dual)}
    if status == STATUS_OPTIMAL and max(residuals.values()) > max(tol, 1e-6):
        # "optimal" promises residuals within 1e-6; anything looser is not
        status = STATUS_NUMERICAL
    x = np.asarray(sol.x, dtype=float)[:n] if len(sol.x) else np.full(n, np.nan)
    primal = {name: x[idx].copy() for name, idx in prog.var_names.items()}
    objective = prog.objective_value(x) if status == STATUS_OPTIMAL else float("nan")
    return SolveResult(
        status=status,
        primal=primal,
        objective=objective,
        iterations=int(sol.iterations),
        residuals=residuals,
        solve_time=float(sol.solve_time),
    )


def dump_program(prog: ConicProgram) -> str:
    """Plain-text listing of a program, for cross-checking against other solvers."""
    lines = [f"variables: {prog.num_vars}"]
    for name, idx in prog.var_names.items():
        lines.append(f"  {name}: x[{idx[0]}..{idx[-1]}] ({len(idx)})")
    lines.append("minimize:")
    nz = np.nonzero(prog.c)[0]
    lines.append(("  " + " + ".join(f"{prog.c[i]:.12g}*x[{i}]" for i in nz)) if len(nz) else "  0")
    for qt in prog.quad_terms:
        lines.append(f"  + {qt.weight:.12g} * ||M x - d||^2   [{qt.label}]"
                     f" (M {qt.nrows}x{prog.num_vars}, nnz {len(qt.vals)})")
    lines.append(f"equalities: {prog.num_eq} rows")
    by_row: dict[int, list[str]] = {}
    for r, cidx, v in zip(prog.eq_rows, prog.eq_cols, prog.eq_vals):
        by_row.setdefault(int(r), []).append(f"{v:.12g}*x[{cidx}]")
    for r in range(prog.num_eq):
        lines.append(f"  {' + '.join(by_row.get(r, ['0']))} = {prog.eq_b[r]:.12g}")
    lines.append(f"nonnegative: {list(map(int, prog.nonneg))}")
    for blk in prog.soc_blocks:
        t_terms = " + ".join(f"{v:.12g}*x[{c}]" for c, v in zip(blk.t_cols, blk.t_vals) if v)
        if blk.t0 or not t_terms:
            t_terms = (t_terms + " + " if t_terms else "") + f"{blk.t0:.12g}"
        lines.append(f"soc [{blk.label}]: ||V x + v0|| <= {t_terms}"
                     f" (V {blk.v_dim}x{prog.num_vars}, nnz {len(blk.v_vals)})")
    return "\n".join(lines) + "\n"
