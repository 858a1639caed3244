"""Solver-agnostic linear models and a HiGHS backend (through scipy).

A :class:`LinearModel` is always a minimisation problem.  Rows are stored in
coordinate form and only converted to a sparse matrix at solve time, so
models with a few hundred thousand rows build quickly.

Dual values reported by :func:`solve_lp_with_duals` are objective
sensitivities with respect to each row's right-hand side, ``d obj / d rhs``.
For a minimisation problem this makes duals of ``>=`` rows non-negative and
duals of ``<=`` rows non-positive.
"""
from __future__ import annotations

import enum
import io
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Iterable, Protocol

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

logger = logging.getLogger(__name__)

GE, LE, EQ = ">=", "<=", "=="
_SENSES = {GE: 1, LE: -1, EQ: 0, ">": 1, "<": -1, "=": 0}

DEFAULT_GAP = 1e-6
BENCHMARK_GAP = 1e-3


class SolverError(RuntimeError):
    """The backend could not be run or returned an unusable answer."""


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    TIME_LIMIT_FEASIBLE = "time-limit-feasible"
    TIME_LIMIT_NO_SOLUTION = "time-limit-no-solution"

    @property
    def has_solution(self) -> bool:
        return self in (Status.OPTIMAL, Status.TIME_LIMIT_FEASIBLE)


class LinearModel:
    """Sparse minimisation model: variables with bounds/integrality, linear rows."""

    def __init__(self, name: str = "model"):
        self.name = name
        self._lb: list[np.ndarray] = []
        self._ub: list[np.ndarray] = []
        self._obj: list[np.ndarray] = []
        self._int: list[np.ndarray] = []
        self._nvars = 0
        self._row_ptr: list[np.ndarray] = []   # row id of every nonzero
        self._col: list[np.ndarray] = []
        self._val: list[np.ndarray] = []
        self._sense: list[np.ndarray] = []
        self._rhs: list[np.ndarray] = []
        self._nrows = 0
        self.obj_offset = 0.0
        self.blocks: dict[str, np.ndarray] = {}
        self.row_blocks: dict[str, np.ndarray] = {}
        self.tags: dict[str, Any] = {}
        self._cache = None

    # -- building ---------------------------------------------------------

    @property
    def num_vars(self) -> int:
        return self._nvars

    @property
    def num_rows(self) -> int:
        return self._nrows

    def add_vars(self, shape, lb=0.0, ub=math.inf, obj=0.0, integer=False,
                 block: str | None = None) -> np.ndarray:
        """Add a block of variables; returns their indices shaped like ``shape``."""
        shape = (int(shape),) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        idx = np.arange(self._nvars, self._nvars + n).reshape(shape)
        self._lb.append(np.broadcast_to(np.asarray(lb, float), shape).ravel().copy())
        self._ub.append(np.broadcast_to(np.asarray(ub, float), shape).ravel().copy())
        self._obj.append(np.broadcast_to(np.asarray(obj, float), shape).ravel().copy())
        self._int.append(np.broadcast_to(np.asarray(integer, bool), shape).ravel().copy())
        self._nvars += n
        if block is not None:
            self.blocks[block] = idx
        self._cache = None
        return idx

    def add_row(self, cols: Iterable[int], vals: Iterable[float], sense: str, rhs: float) -> int:
        cols = np.asarray(list(cols) if not isinstance(cols, np.ndarray) else cols, dtype=np.int64)
        vals = np.asarray(list(vals) if not isinstance(vals, np.ndarray) else vals, dtype=float)
        return int(self.add_rows(cols[None, :], vals[None, :], sense, [rhs])[0])

    def add_rows(self, cols, vals, sense, rhs, block: str | None = None) -> np.ndarray:
        """Add ``k`` rows at once; ``cols``/``vals`` are ``k x w`` arrays.

        Zero coefficients are dropped, so ragged rows can be padded with any
        column index and a zero value.
        """
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.broadcast_to(np.asarray(vals, dtype=float), cols.shape)
        k = cols.shape[0]
        rhs = np.broadcast_to(np.asarray(rhs, dtype=float), (k,)).copy()
        if isinstance(sense, str):
            sense_arr = np.full(k, _sense_code(sense), dtype=np.int8)
        else:
            sense_arr = np.array([_sense_code(s) for s in sense], dtype=np.int8)
        if cols.size and (cols.min() < 0 or cols.max() >= self._nvars):
            raise ValueError("row references an unregistered variable")
        ids = np.arange(self._nrows, self._nrows + k)
        rows = np.broadcast_to(ids[:, None], cols.shape)
        keep = vals != 0
        self._row_ptr.append(rows[keep])
        self._col.append(cols[keep])
        self._val.append(vals[keep])
        self._sense.append(sense_arr)
        self._rhs.append(rhs)
        self._nrows += k
        if block is not None:
            prev = self.row_blocks.get(block)
            self.row_blocks[block] = ids if prev is None else np.concatenate([prev, ids])
        self._cache = None
        return ids

    def add_sparse_rows(self, rows, cols, vals, senses, rhs, block: str | None = None) -> np.ndarray:
        """Add rows given in coordinate form; ``rows`` holds local ids ``0..k-1``."""
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float)).copy()
        k = rhs.shape[0]
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        if isinstance(senses, str):
            sense_arr = np.full(k, _sense_code(senses), dtype=np.int8)
        else:
            sense_arr = np.asarray(senses, dtype=np.int8)
            if sense_arr.shape != (k,) or not np.isin(sense_arr, (-1, 0, 1)).all():
                raise ValueError("senses must be +1, -1 or 0 per row")
        if rows.size and (rows.min() < 0 or rows.max() >= k):
            raise ValueError("local row id out of range")
        if cols.size and (cols.min() < 0 or cols.max() >= self._nvars):
            raise ValueError("row references an unregistered variable")
        keep = vals != 0
        self._row_ptr.append(rows[keep] + self._nrows)
        self._col.append(cols[keep])
        self._val.append(vals[keep])
        self._sense.append(sense_arr)
        self._rhs.append(rhs)
        ids = np.arange(self._nrows, self._nrows + k)
        self._nrows += k
        if block is not None:
            prev = self.row_blocks.get(block)
            self.row_blocks[block] = ids if prev is None else np.concatenate([prev, ids])
        self._cache = None
        return ids

    # -- views ------------------------------------------------------------

    def _arrays(self):
        if self._cache is None:
            cat = lambda parts, dt: np.concatenate(parts) if parts else np.empty(0, dt)
            lb, ub = cat(self._lb, float), cat(self._ub, float)
            obj, integ = cat(self._obj, float), cat(self._int, bool)
            rows, cols, vals = cat(self._row_ptr, np.int64), cat(self._col, np.int64), cat(self._val, float)
            A = sp.csr_matrix((vals, (rows, cols)), shape=(self._nrows, self._nvars))
            A.sum_duplicates()
            self._lb, self._ub, self._obj, self._int = [lb], [ub], [obj], [integ]
            self._row_ptr, self._col, self._val = [rows], [cols], [vals]
            sense, rhs = cat(self._sense, np.int8), cat(self._rhs, float)
            self._sense, self._rhs = [sense], [rhs]
            self._cache = (lb, ub, obj, integ, A, sense, rhs)
        return self._cache

    @property
    def lb(self) -> np.ndarray:
        return self._arrays()[0]

    @property
    def ub(self) -> np.ndarray:
        return self._arrays()[1]

    @property
    def objective(self) -> np.ndarray:
        return self._arrays()[2]

    @property
    def integrality(self) -> np.ndarray:
        return self._arrays()[3]

    @property
    def matrix(self) -> sp.csr_matrix:
        return self._arrays()[4]

    @property
    def senses(self) -> np.ndarray:
        """Row senses coded +1 (>=), -1 (<=), 0 (==)."""
        return self._arrays()[5]

    @property
    def rhs(self) -> np.ndarray:
        return self._arrays()[6]

    @property
    def is_mip(self) -> bool:
        return bool(self.integrality.any())

    # -- mutation after build ----------------------------------------------

    def set_bounds(self, idx, lb=None, ub=None) -> None:
        arr = self._arrays()
        if lb is not None:
            arr[0][idx] = lb
        if ub is not None:
            arr[1][idx] = ub

    def set_rhs(self, rows, values) -> None:
        self._arrays()[6][rows] = values

    def relaxed(self) -> "LinearModel":
        """Copy with every integrality flag dropped."""
        out = self.copy()
        out._arrays()[3][:] = False
        return out

    def copy(self) -> "LinearModel":
        lb, ub, obj, integ, A, sense, rhs = self._arrays()
        out = LinearModel(self.name)
        out._lb, out._ub, out._obj, out._int = [lb.copy()], [ub.copy()], [obj.copy()], [integ.copy()]
        out._row_ptr, out._col, out._val = ([a.copy() for a in self._row_ptr],
                                            [a.copy() for a in self._col],
                                            [a.copy() for a in self._val])
        out._sense, out._rhs = [sense.copy()], [rhs.copy()]
        out._nvars, out._nrows = self._nvars, self._nrows
        out.obj_offset = self.obj_offset
        out.blocks = dict(self.blocks)
        out.row_blocks = dict(self.row_blocks)
        out.tags = dict(self.tags)
        return out

    def evaluate(self, x: np.ndarray) -> float:
        return float(self.objective @ x) + self.obj_offset

    def violation(self, x: np.ndarray) -> float:
        """Largest bound or row violation of a point."""
        lb, ub, _, _, A, sense, rhs = self._arrays()
        act = A @ x
        v = [0.0, float(np.max(lb - x, initial=0)), float(np.max(x - ub, initial=0))]
        if self._nrows:
            v.append(float(np.max(np.where(sense >= 0, rhs - act, 0), initial=0)))
            v.append(float(np.max(np.where(sense <= 0, act - rhs, 0), initial=0)))
        return max(v)

    def to_lp_text(self) -> str:
        """CPLEX-LP rendering, meant for debugging small models."""
        lb, ub, obj, integ, A, sense, rhs = self._arrays()
        buf = io.StringIO()
        buf.write(f"\\ {self.name}\nMinimize\n obj:")
        buf.write(_lp_expr(np.nonzero(obj)[0], obj[obj != 0]) or " 0 v0")
        if self.obj_offset:
            buf.write(f" + {_num(self.obj_offset)}")
        buf.write("\nSubject To\n")
        ops = {1: ">=", -1: "<=", 0: "="}
        for r in range(self._nrows):
            lo, hi = A.indptr[r], A.indptr[r + 1]
            buf.write(f" c{r}:{_lp_expr(A.indices[lo:hi], A.data[lo:hi]) or ' 0 v0'}"
                      f" {ops[int(sense[r])]} {_num(rhs[r])}\n")
        buf.write("Bounds\n")
        for j in range(self._nvars):
            lo = "-inf" if np.isneginf(lb[j]) else _num(lb[j])
            hi = "+inf" if np.isposinf(ub[j]) else _num(ub[j])
            buf.write(f" {lo} <= v{j} <= {hi}\n")
        ints = np.nonzero(integ)[0]
        if ints.size:
            buf.write("General\n " + " ".join(f"v{j}" for j in ints) + "\n")
        buf.write("End\n")
        return buf.getvalue()


def _sense_code(sense: str) -> int:
    try:
        return _SENSES[sense]
    except KeyError:
        raise ValueError(f"unknown row sense {sense!r}") from None


def _lp_expr(cols, vals) -> str:
    return "".join(f" {'+' if v >= 0 else '-'} {_num(abs(v))} v{c}" for c, v in zip(cols, vals))


def _num(v) -> str:
    return f"{float(v):.17g}"


@dataclass
class SolveOutcome:
    status: Status
    objective: float = math.nan
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    dual_objective: float = math.nan
    wall_time: float = 0.0
    mip_gap: float = math.nan
    message: str = ""
    info: dict[str, Any] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


class Backend(Protocol):
    name: str

    def solve_milp(self, model: LinearModel, time_limit: float | None, gap_tol: float) -> SolveOutcome: ...

    def solve_lp(self, model: LinearModel, time_limit: float | None) -> SolveOutcome: ...


class HighsBackend:
    """HiGHS through :mod:`scipy.optimize` (``milp`` and ``linprog``)."""

    name = "highs"

    def solve_milp(self, model: LinearModel, time_limit: float | None = None,
                   gap_tol: float = DEFAULT_GAP) -> SolveOutcome:
        lb, ub, obj, integ, A, sense, rhs = model._arrays()
        start = time.perf_counter()
        if model.num_vars == 0:
            return _empty_outcome(model, start)
        row_lo = np.where(sense >= 0, rhs, -np.inf)
        row_hi = np.where(sense <= 0, rhs, np.inf)
        options = {"disp": False, "mip_rel_gap": gap_tol}
        if time_limit is not None:
            options["time_limit"] = float(time_limit)
        constraints = [LinearConstraint(A, row_lo, row_hi)] if model.num_rows else []
        try:
            res = milp(obj, integrality=integ.astype(np.uint8), bounds=Bounds(lb, ub),
                       constraints=constraints, options=options)
        except ValueError as exc:
            raise SolverError(f"malformed model {model.name!r}: {exc}") from exc
        wall = time.perf_counter() - start
        has_x = res.x is not None
        if res.status == 0:
            status = Status.OPTIMAL
        elif res.status == 1:
            status = Status.TIME_LIMIT_FEASIBLE if has_x else Status.TIME_LIMIT_NO_SOLUTION
        elif res.status == 2:
            status = Status.INFEASIBLE
        elif res.status == 3:
            status = Status.UNBOUNDED
        else:
            raise SolverError(f"HiGHS failed on {model.name!r}: {res.message}")
        out = SolveOutcome(status=status, wall_time=wall, message=str(res.message))
        if has_x:
            out.x = np.asarray(res.x)
            out.objective = float(res.fun) + model.obj_offset
            gap = getattr(res, "mip_gap", None)
            out.mip_gap = float(gap) if gap is not None else (0.0 if not model.is_mip else math.nan)
        return out

    def solve_lp(self, model: LinearModel, time_limit: float | None = None) -> SolveOutcome:
        lb, ub, obj, _, A, sense, rhs = model._arrays()
        start = time.perf_counter()
        if model.num_vars == 0:
            return _empty_outcome(model, start)
        ineq = np.nonzero(sense != 0)[0]
        eq = np.nonzero(sense == 0)[0]
        # >= rows are negated into <= form
        flip = np.where(sense[ineq] > 0, -1.0, 1.0)
        A_ub = sp.diags(flip) @ A[ineq] if ineq.size else None
        b_ub = flip * rhs[ineq] if ineq.size else None
        A_eq = A[eq] if eq.size else None
        b_eq = rhs[eq] if eq.size else None
        options = {"disp": False}
        if time_limit is not None:
            options["time_limit"] = float(time_limit)
        bounds = np.column_stack([np.where(np.isneginf(lb), None, lb),
                                  np.where(np.isposinf(ub), None, ub)])
        res = linprog(obj, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                      method="highs", options=options)
        wall = time.perf_counter() - start
        status = {0: Status.OPTIMAL, 2: Status.INFEASIBLE, 3: Status.UNBOUNDED}.get(res.status)
        if status is None:
            if res.status == 1:
                status = Status.TIME_LIMIT_FEASIBLE if res.x is not None else Status.TIME_LIMIT_NO_SOLUTION
            else:
                raise SolverError(f"HiGHS LP failed on {model.name!r}: {res.message}")
        out = SolveOutcome(status=status, wall_time=wall, message=str(res.message), mip_gap=0.0)
        if res.x is not None and status.has_solution:
            out.x = np.asarray(res.x)
            out.objective = float(res.fun) + model.obj_offset
        if status is Status.OPTIMAL:
            duals = np.zeros(model.num_rows)
            if ineq.size:
                duals[ineq] = flip * res.ineqlin.marginals
            if eq.size:
                duals[eq] = res.eqlin.marginals
            out.duals = duals
            lo_m, hi_m = res.lower.marginals, res.upper.marginals
            bound_part = (np.dot(np.where(np.isfinite(lb), lb, 0.0), lo_m)
                          + np.dot(np.where(np.isfinite(ub), ub, 0.0), hi_m))
            out.dual_objective = float(duals @ rhs + bound_part) + model.obj_offset
        return out


def _empty_outcome(model: LinearModel, start: float) -> SolveOutcome:
    return SolveOutcome(status=Status.OPTIMAL, objective=model.obj_offset, x=np.empty(0),
                        duals=np.zeros(model.num_rows), dual_objective=model.obj_offset,
                        wall_time=time.perf_counter() - start, mip_gap=0.0)


_BACKENDS: dict[str, Backend] = {"highs": HighsBackend()}
_default = "highs"


def register_backend(backend: Backend, default: bool = False) -> None:
    global _default
    _BACKENDS[backend.name] = backend
    if default:
        _default = backend.name


def get_backend(name: str | None = None) -> Backend:
    try:
        return _BACKENDS[name or _default]
    except KeyError:
        raise SolverError(f"solver backend {name!r} is not available; "
                          f"registered: {sorted(_BACKENDS)}") from None


def solve_milp(model: LinearModel, time_limit: float | None = None,
               gap_tol: float = DEFAULT_GAP, backend: str | None = None) -> SolveOutcome:
    out = get_backend(backend).solve_milp(model, time_limit, gap_tol)
    logger.debug("%s: %s obj=%.6g in %.3fs", model.name, out.status.value, out.objective, out.wall_time)
    return out


def solve_lp_with_duals(model: LinearModel, time_limit: float | None = None,
                        backend: str | None = None) -> SolveOutcome:
    """Solve the continuous relaxation of ``model`` and return row duals."""
    return get_backend(backend).solve_lp(model, time_limit)


def values_close(a: float, b: float, rel: float = 1e-6, abs_floor: float = 1e-8) -> bool:
    """Equality of optimal values used across the package."""
    return abs(a - b) <= max(abs_floor, rel * max(1.0, abs(a), abs(b)))
