"""
conic.py

Thin layer over cvxpy for the convex subproblems: named variables, cone
constraints tagged by role, epigraph helpers, a solve call that reports
outcomes instead of raising, and a Conic Benchmark Format (CBF) writer.

Rotated second-order cones follow the convention ``2ab >= ||c||^2`` with
``a, b >= 0``; they are lowered to ordinary SOCs as
``||(sqrt(2) c, a - b)|| <= a + b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import cvxpy as cp
import numpy as np

DEFAULT_TOL = 1e-7
CONES = ("zero", "nonneg", "soc", "rotated_soc", "power")

_STATUS = {
    cp.OPTIMAL: "optimal",
    cp.OPTIMAL_INACCURATE: "numerical-limit",
    cp.INFEASIBLE: "infeasible",
    cp.INFEASIBLE_INACCURATE: "infeasible",
    cp.UNBOUNDED: "unbounded",
    cp.UNBOUNDED_INACCURATE: "unbounded",
}


@dataclass(eq=False)
class ConeBlock:
    cone: str
    tag: str
    constraint: cp.Constraint
    args: tuple

    def residual(self):
        """Largest violation of this block at the current variable values."""
        vals = [_value(arg) for arg in self.args]
        if any(v is None for v in vals):
            return math.inf
        if self.cone == "zero":
            return float(np.max(np.abs(vals[0]), initial=0.0))
        if self.cone == "nonneg":
            return float(np.max(-vals[0], initial=0.0))
        if self.cone == "soc":
            t, parts = vals[0], vals[1:]
            return float(np.max(_norm(parts) - t, initial=0.0))
        if self.cone == "rotated_soc":
            a, b, parts = vals[0], vals[1], vals[2:]
            lhs = _norm([math.sqrt(2.0) * p for p in parts] + [a - b])
            return float(np.max(np.maximum(lhs - (a + b), np.maximum(-a, -b)), initial=0.0))
        x, y, z, alpha = vals
        xp = np.maximum(x, 0.0)
        yp = np.maximum(y, 0.0)
        gap = np.abs(z) - xp**alpha * yp ** (1.0 - alpha)
        return float(np.max(np.maximum(gap, np.maximum(-x, -y)), initial=0.0))


def _value(arg):
    if isinstance(arg, cp.Expression):
        value = arg.value
        return None if value is None else np.asarray(value, dtype=float)
    return np.asarray(arg, dtype=float)


def _norm(parts):
    return np.sqrt(sum(np.asarray(p, dtype=float) ** 2 for p in parts))


def _stack(rows, like):
    """Stack expressions shaped like *like* into cone rows (one cone per column)."""
    if like.ndim == 0:
        return cp.hstack([cp.reshape(r, (1,)) for r in rows]), None
    return cp.vstack(rows), 0


@dataclass
class SolveReport:
    status: str
    objective: float
    point: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    solver_status: str = ""
    solve_time_s: float = 0.0

    @property
    def max_residual(self):
        return max(self.residuals.values(), default=0.0)

    @property
    def usable(self):
        return self.status in ("optimal", "numerical-limit")


class ConicProgram:
    """Linear objective over cone-constrained cvxpy variables."""

    def __init__(self, name="program"):
        self.name = name
        self.variables: dict[str, cp.Variable] = {}
        self.blocks: list[ConeBlock] = []
        # Builder-specific expressions (epigraph variables and the like).
        self.handles: dict[str, cp.Expression] = {}
        self._objective = cp.Constant(0.0)
        self._counter = 0

    # -- variables ------------------------------------------------------------

    def variable(self, name, shape=(), nonneg=False) -> cp.Variable:
        if name in self.variables:
            raise ValueError(f"variable {name!r} already defined")
        var = cp.Variable(shape, name=name, nonneg=nonneg)
        self.variables[name] = var
        return var

    def _fresh(self, tag, shape):
        self._counter += 1
        return self.variable(f"{tag}#{self._counter}", shape)

    def var(self, name) -> cp.Variable:
        return self.variables[name]

    @property
    def n_variables(self):
        return sum(int(np.prod(v.shape)) for v in self.variables.values())

    # -- cone constraints -------------------------------------------------------

    def _add(self, cone, tag, constraint, args):
        self.blocks.append(ConeBlock(cone=cone, tag=tag, constraint=constraint, args=args))
        return constraint

    def add_zero(self, expr, tag):
        return self._add("zero", tag, expr == 0, (expr,))

    def add_nonneg(self, expr, tag):
        return self._add("nonneg", tag, expr >= 0, (expr,))

    def add_soc(self, t, parts, tag):
        """``||parts|| <= t``, one cone per entry of *t*."""
        t = _expr(t)
        stacked, axis = _stack([_expr(p, t.shape) for p in parts], t)
        con = cp.SOC(t, stacked) if axis is None else cp.SOC(t, stacked, axis=axis)
        return self._add("soc", tag, con, (t, *parts))

    def add_rotated_soc(self, a, b, parts, tag):
        """``2ab >= ||parts||^2`` with ``a, b >= 0``."""
        a = _expr(a)
        b = _expr(b, a.shape)
        rows = [math.sqrt(2.0) * _expr(p, a.shape) for p in parts] + [a - b]
        stacked, axis = _stack(rows, a)
        con = cp.SOC(a + b, stacked) if axis is None else cp.SOC(a + b, stacked, axis=axis)
        return self._add("rotated_soc", tag, con, (a, b, *parts))

    def add_power(self, x, y, z, alpha, tag):
        """``x^alpha * y^(1-alpha) >= |z|`` with ``x, y >= 0``."""
        z = _expr(z)
        x = _expr(x, z.shape)
        y = _expr(y, z.shape)
        alpha_arr = alpha if z.ndim == 0 else np.full(z.shape, alpha)
        con = cp.PowCone3D(x, y, z, alpha_arr)
        return self._add("power", tag, con, (x, y, z, alpha))

    # -- epigraph helpers -------------------------------------------------------

    def add_quad_over_lin(self, a, tau, tag="quad_over_lin"):
        """Epigraph variable ``t >= a^2 / tau``."""
        a = _expr(a)
        t = self._fresh(tag, a.shape)
        self.add_rotated_soc(t / 2.0, tau, [a], tag)
        return t

    def add_cubic_over_square(self, delta, time, tag="cubic_over_square"):
        """Epigraph variable ``t >= delta^3 / time^2``."""
        delta = _expr(delta)
        t = self._fresh(tag, delta.shape)
        self.add_power(t, time, delta, 1.0 / 3.0, tag)
        return t

    def add_quartic_over_square(self, time, y, bound, tag="quartic_over_square"):
        """Enforce ``time^4 / y^2 <= bound`` through ``w >= time^2 / y`` and ``w^2 <= bound``.

        Returns ``w``.
        """
        time = _expr(time)
        w = self._fresh(tag, time.shape)
        self.add_rotated_soc(w / 2.0, y, [time], tag)
        self.add_rotated_soc(_expr(bound, time.shape) / 2.0, np.ones(time.shape), [w], tag)
        return w

    def add_norm_bound(self, parts, tag="norm_bound"):
        """Epigraph variable ``delta >= ||parts||`` (parts stacked componentwise)."""
        first = _expr(parts[0])
        delta = self._fresh(tag, first.shape)
        self.add_soc(delta, parts, tag)
        return delta

    # -- objective --------------------------------------------------------------

    def minimize(self, expr):
        self._objective = expr

    def problem(self) -> cp.Problem:
        return cp.Problem(cp.Minimize(self._objective), [b.constraint for b in self.blocks])

    def residuals(self):
        out = {}
        for block in self.blocks:
            out[block.tag] = max(out.get(block.tag, 0.0), block.residual())
        return out


def _expr(value, shape=None):
    if isinstance(value, cp.Expression):
        return value
    arr = np.asarray(value, dtype=float)
    if shape is not None and arr.shape != tuple(shape):
        arr = np.broadcast_to(arr, shape).copy()
    return cp.Constant(arr)


def solve(prog: ConicProgram, tol=DEFAULT_TOL, verbose=False, max_iter=None) -> SolveReport:
    """Solve *prog* with Clarabel; solver failures come back as a status."""
    problem = prog.problem()
    settings = {"tol_gap_abs": tol, "tol_gap_rel": tol, "tol_feas": tol}
    if max_iter is not None:
        settings["max_iter"] = int(max_iter)
    try:
        problem.solve(solver=cp.CLARABEL, verbose=verbose, **settings)
    except cp.SolverError as exc:
        return SolveReport(status="numerical-limit", objective=math.nan, solver_status=str(exc))

    status = _STATUS.get(problem.status, "numerical-limit")
    point = {
        name: None if var.value is None else np.array(var.value, dtype=float)
        for name, var in prog.variables.items()
    }
    residuals = prog.residuals() if status in ("optimal", "numerical-limit") else {}
    objective = problem.value if problem.value is not None else math.nan
    stats = problem.solver_stats
    return SolveReport(
        status=status,
        objective=float(objective),
        point=point,
        residuals=residuals,
        solver_status=str(problem.status),
        solve_time_s=float(stats.solve_time or 0.0) if stats is not None else 0.0,
    )


def dump_cbf(prog: ConicProgram, path):
    """Write the canonicalized program in CBF version 3 (with power cones).

    Constraint rows are emitted as ``-A x + b`` in the cone, the form the
    solver data takes (``A x + s = b, s in K``).
    """
    data, _, _ = prog.problem().get_problem_data(cp.CLARABEL)
    a_mat = data["A"].tocoo()
    b_vec = np.asarray(data["b"], dtype=float)
    c_vec = np.asarray(data["c"], dtype=float)
    dims = data["dims"]
    if getattr(dims, "exp", 0):
        raise ValueError("exponential cones are not emitted")
    n_rows, n_cols = a_mat.shape

    cones = []
    if dims.zero:
        cones.append(f"L= {dims.zero}")
    if dims.nonneg:
        cones.append(f"L+ {dims.nonneg}")
    for size in dims.soc:
        cones.append(f"Q {size}")
    alphas = [float(al) for al in getattr(dims, "p3d", [])]
    alpha_types = sorted(set(alphas))
    for al in alphas:
        cones.append(f"@{alpha_types.index(al)}:POW 3")

    lines = [f"# program {prog.name}", "VER", "3", "", "OBJSENSE", "MIN", ""]
    if alpha_types:
        lines += ["POWCONES", f"{len(alpha_types)} {2 * len(alpha_types)}"]
        for al in alpha_types:
            lines += ["2", repr(al), repr(1.0 - al)]
        lines.append("")
    lines += ["VAR", f"{n_cols} 1", f"F {n_cols}", ""]
    lines += ["CON", f"{n_rows} {len(cones)}", *cones, ""]

    obj = [(j, v) for j, v in enumerate(c_vec) if v != 0.0]
    lines += ["OBJACOORD", str(len(obj))] + [f"{j} {v!r}" for j, v in obj] + [""]
    entries = [(i, j, -v) for i, j, v in zip(a_mat.row, a_mat.col, a_mat.data) if v != 0.0]
    lines += ["ACOORD", str(len(entries))] + [f"{i} {j} {v!r}" for i, j, v in entries] + [""]
    rhs = [(i, v) for i, v in enumerate(b_vec) if v != 0.0]
    lines += ["BCOORD", str(len(rhs))] + [f"{i} {v!r}" for i, v in rhs] + [""]

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines))
    return path
