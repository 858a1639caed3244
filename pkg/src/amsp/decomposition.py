"""Cutting-plane solver over revision schedules.

The master problem chooses a schedule ``r`` and an estimate ``theta`` of the
subproblem value ``Q(r)``.  Two cut families bound ``theta`` from below:

* integer L-shaped cuts, exact at the generating schedule and no stronger
  than the multistage bound ``L`` elsewhere;
* Benders cuts from the LP relaxation of the fixed-schedule subproblem,
  where ``r`` only moves right-hand sides of the NAC rows.

Optional heuristic cuts ``r[i, t] >= r_lo[i, t]`` come from solving the
reduced adaptive model on a truncated horizon.  They speed things up but may
cut off the optimum; ``DecompositionConfig.exact()`` turns them off together
with the relaxed-bound gate on subproblem solves.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, TextIO

import numpy as np

from .model import (
    AmspInstance, FixedRevisionModel, InconsistencyError, RevisionSchedule, build_ams, build_msp,
    schedule_from_solution,
)
from .nac import NacSet
from .solver_backend import LinearModel, SolverError, Status, solve_milp

logger = logging.getLogger(__name__)

LSHAPED, BENDERS, HEURISTIC = "lshaped", "benders", "heuristic"


@dataclass(frozen=True)
class Cut:
    """``theta_coef * theta >= constant + sum(r_coef * r)``."""

    kind: str
    r_coef: np.ndarray
    constant: float
    theta_coef: float = 1.0
    generator: RevisionSchedule | None = None
    value: float = math.nan

    def rhs(self, schedule: RevisionSchedule) -> float:
        return float(self.constant + np.sum(self.r_coef * schedule.matrix))

    def satisfied(self, schedule: RevisionSchedule, theta: float, tol: float = 1e-6) -> bool:
        return self.theta_coef * theta >= self.rhs(schedule) - tol * max(1.0, abs(theta))


def _bound(value: float, mip_gap: float) -> float:
    """Dual bound implied by an incumbent value and a relative MIP gap."""
    if not math.isfinite(mip_gap) or mip_gap <= 0:
        return value
    return value - mip_gap * abs(value)


def lshaped_cut(schedule: RevisionSchedule, q_value: float, lower: float, tol: float = 1e-6) -> Cut:
    """Integer L-shaped cut generated at ``schedule`` with exact value ``q_value``.

    ``q_value`` slightly below ``lower`` (solver noise) is lifted to ``lower``.
    """
    if q_value < lower:
        if lower - q_value > tol * max(1.0, abs(lower)):
            raise InconsistencyError(f"subproblem value {q_value} is below the lower bound {lower}")
        q_value = lower
    steps = np.diff(schedule.matrix, axis=1)
    sign = np.where(steps == 1, 1.0, -1.0)               # stages 2..T
    coef = np.zeros(schedule.matrix.shape)
    # sum_t s_t (r_t - r_{t-1}) = sum_t r_t (s_t - s_{t+1}), s_{T+1} = 0
    nxt = np.concatenate([sign[:, 1:], np.zeros((sign.shape[0], 1))], axis=1)
    coef[:, 1:] = sign - nxt
    coef[:, 0] = -sign[:, 0] if sign.shape[1] else 0.0
    spread = q_value - lower
    return Cut(LSHAPED, spread * coef, q_value - spread * float(steps.sum()),
               generator=schedule, value=q_value)


def benders_cut(schedule: RevisionSchedule, q_relaxed: float, nac_duals: np.ndarray | None,
                nacs: NacSet, xbar: np.ndarray) -> Cut:
    """Sensitivity cut ``theta >= Q_lp(r_bar) + sum_c dual_c (rhs_c(r) - rhs_c(r_bar))``.

    NAC row ``c`` has right-hand side ``-xbar_i (r[i, t'] - r[i, t_a])``.
    """
    if nac_duals is None:
        raise ValueError("Benders cut needs the NAC row duals")
    nac_duals = np.asarray(nac_duals, dtype=float)
    if nac_duals.shape != (len(nacs),):
        raise ValueError(f"expected {len(nacs)} NAC duals, got {nac_duals.shape}")
    w = nac_duals * np.asarray(xbar)[nacs.state]
    coef = np.zeros(schedule.matrix.shape)
    np.add.at(coef, (nacs.state, nacs.stage - 1), -w)
    np.add.at(coef, (nacs.state, nacs.ancestor_stage - 1), w)
    gap = schedule.matrix[nacs.state, nacs.stage - 1] - schedule.matrix[nacs.state, nacs.ancestor_stage - 1]
    return Cut(BENDERS, coef, float(q_relaxed + np.dot(w, gap)), generator=schedule, value=q_relaxed)


@dataclass
class DecompositionConfig:
    epsilon: float = 1e-3
    horizon_cut: int = 2
    heuristic: bool = True
    rub_gate: bool = True
    time_limit: float | None = None
    subproblem_gap: float = 1e-6
    master_gap: float = 1e-9
    max_iterations: int | None = None

    @classmethod
    def exact(cls, **kw) -> "DecompositionConfig":
        return cls(heuristic=False, rub_gate=False, **kw)

    def validate(self, num_stages: int) -> None:
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.heuristic and num_stages > 1 and not 1 <= self.horizon_cut <= num_stages - 1:
            raise ValueError(f"horizon cut must lie in 1..{num_stages - 1}")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ValueError("time_limit must be positive")


class IterationRecord(NamedTuple):
    iteration: int
    lb: float
    ub: float
    rub: float
    gap: float
    lshaped: int
    benders: int
    heuristic: int
    subproblem_solved: bool
    schedule: str
    wall_time: float


LOG_FIELDS = IterationRecord._fields


@dataclass
class DecompositionState:
    num_states: int
    num_stages: int
    mu: int
    epsilon: float
    L: float = -math.inf
    LB: float = -math.inf
    UB: float = math.inf
    RUB: float = math.inf
    incumbent: RevisionSchedule | None = None
    lshaped: list[Cut] = field(default_factory=list)
    benders: list[Cut] = field(default_factory=list)
    heuristic: list[Cut] = field(default_factory=list)
    log: list[IterationRecord] = field(default_factory=list)
    evaluated: dict[RevisionSchedule, float] = field(default_factory=dict)
    relaxed_values: dict[RevisionSchedule, float] = field(default_factory=dict)
    status: str = "running"
    wall_time: float = 0.0
    heuristic_dropped: bool = False

    @property
    def gap(self) -> float:
        return relative_gap(self.LB, self.UB)

    @property
    def cuts(self) -> list[Cut]:
        return self.lshaped + self.benders + self.heuristic

    def log_csv(self, out: TextIO | None = None) -> str:
        buf = out if out is not None else io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(LOG_FIELDS)
        for rec in self.log:
            writer.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in rec])
        return buf.getvalue() if out is None else ""


def relative_gap(lb: float, ub: float) -> float:
    if not (math.isfinite(lb) and math.isfinite(ub)):
        return math.inf
    return (ub - lb) / max(abs(ub), 1e-10)


def _master_model(state: DecompositionState) -> LinearModel:
    I, T, mu = state.num_states, state.num_stages, state.mu
    m = LinearModel("master")
    cap = np.minimum(np.arange(T), mu).astype(float)
    r = m.add_vars((I, T), lb=0.0, ub=np.broadcast_to(cap, (I, T)), integer=True, block="r")
    theta = m.add_vars(1, lb=state.L, obj=1.0, block="theta")[0]
    if T > 1:
        cols = np.stack([r[:, 1:].ravel(), r[:, :-1].ravel()], axis=1)
        vals = np.tile([1.0, -1.0], (cols.shape[0], 1))
        m.add_rows(cols, vals, ">=", 0.0)
        m.add_rows(cols, vals, "<=", 1.0)
    cuts = state.lshaped + state.benders + state.heuristic
    if cuts:
        cols = np.concatenate([r.ravel(), [theta]])
        coef = np.array([np.concatenate([-c.r_coef.ravel(), [c.theta_coef]]) for c in cuts])
        rhs = np.array([c.constant for c in cuts])
        m.add_rows(np.broadcast_to(cols, coef.shape), coef, ">=", rhs, block="cuts")
    return m


def solve_master(state: DecompositionState, time_limit: float | None = None,
                 gap_tol: float = 1e-9) -> tuple[RevisionSchedule, float]:
    """Minimise ``theta`` over schedules subject to every cut in the pools.

    If heuristic cuts make the master infeasible they are dropped for good.
    """
    m = _master_model(state)
    out = solve_milp(m, time_limit, gap_tol)
    if out.status is Status.INFEASIBLE and state.heuristic:
        logger.warning("master infeasible with heuristic cuts; dropping them")
        state.heuristic = []
        state.heuristic_dropped = True
        m = _master_model(state)
        out = solve_milp(m, time_limit, gap_tol)
    if not out.status.has_solution:
        raise SolverError(f"master problem ended with status {out.status.value}")
    schedule = RevisionSchedule(np.rint(out.x[m.blocks["r"]]).astype(np.int64))
    return schedule, _bound(out.objective, out.mip_gap)


def heuristic_cuts(instance: AmspInstance, horizon_cut: int, time_limit: float | None = None,
                   gap_tol: float = 1e-6) -> tuple[list[Cut], RevisionSchedule | None]:
    """Cuts ``r[i, t] >= r_lo[i, t]`` for ``t <= T - horizon_cut`` from a truncated solve.

    Also returns ``r_lo`` extended to the full horizon (held constant), which
    is a feasible starting schedule.  On solver failure the list is empty.
    """
    T, I = instance.tree.num_stages, instance.num_states
    if not 1 <= horizon_cut <= T - 1:
        raise ValueError(f"horizon cut must lie in 1..{T - 1}")
    short = instance.truncate(T - horizon_cut)
    m = build_ams(short, "reduced")
    out = solve_milp(m, time_limit, gap_tol)
    if not out.status.has_solution:
        logger.warning("truncated solve failed (%s); no heuristic cuts", out.status.value)
        return [], None
    r_lo = schedule_from_solution(m, out.x).matrix
    cuts = []
    for i in range(I):
        for t in range(1, T - horizon_cut + 1):
            if r_lo[i, t - 1] > 0:
                coef = np.zeros((I, T))
                coef[i, t - 1] = -1.0
                cuts.append(Cut(HEURISTIC, coef, float(r_lo[i, t - 1]), theta_coef=0.0))
    padded = np.concatenate([r_lo, np.repeat(r_lo[:, -1:], horizon_cut, axis=1)], axis=1)
    return cuts, RevisionSchedule(padded)


def run(instance: AmspInstance, config: DecompositionConfig | None = None) -> DecompositionState:
    config = config or DecompositionConfig()
    T, I = instance.tree.num_stages, instance.num_states
    config.validate(T)
    start = time.perf_counter()
    deadline = None if config.time_limit is None else start + config.time_limit

    def remaining() -> float | None:
        return None if deadline is None else max(deadline - time.perf_counter(), 1e-3)

    state = DecompositionState(I, T, instance.mu, config.epsilon)
    msp = solve_milp(build_msp(instance), remaining(), config.subproblem_gap)
    if msp.status is not Status.OPTIMAL:
        raise SolverError(f"multistage bound solve ended with status {msp.status.value}")
    state.L = _bound(msp.objective, msp.mip_gap)

    schedule = RevisionSchedule.zeros(I, T)
    if config.heuristic and T > 1:
        cuts, start_schedule = heuristic_cuts(instance, config.horizon_cut, remaining(), config.subproblem_gap)
        state.heuristic = cuts
        if start_schedule is not None:
            schedule = start_schedule

    relaxed = FixedRevisionModel(instance, relaxed=True)
    exact = FixedRevisionModel(instance, relaxed=False)
    it = 0
    while True:
        it += 1
        rsp = relaxed.solve(schedule, remaining())
        if rsp.status is not Status.OPTIMAL:
            if rsp.status is Status.TIME_LIMIT_NO_SOLUTION or rsp.status is Status.TIME_LIMIT_FEASIBLE:
                state.status = "time-limit"
                break
            raise SolverError(f"relaxed subproblem ended with status {rsp.status.value}")
        q_lo = rsp.objective
        # a schedule proposed again whose exact value was skipped must be evaluated now
        repeated = schedule in state.relaxed_values
        state.relaxed_values[schedule] = q_lo
        if len(relaxed.nacs):
            state.benders.append(benders_cut(schedule, q_lo, rsp.duals[relaxed.nac_rows],
                                             relaxed.nacs, instance.xbar))
        solve_sp = (not config.rub_gate or q_lo <= state.RUB or repeated) and schedule not in state.evaluated
        if solve_sp:
            state.RUB = q_lo
            sp = exact.solve(schedule, remaining(), config.subproblem_gap)
            if not sp.status.has_solution:
                if sp.status is Status.TIME_LIMIT_NO_SOLUTION:
                    state.status = "time-limit"
                    break
                raise SolverError(f"subproblem ended with status {sp.status.value}")
            cut = lshaped_cut(schedule, sp.objective, state.L)
            q = cut.value
            state.evaluated[schedule] = q
            state.lshaped.append(cut)
            if q < state.UB:
                state.UB, state.incumbent = q, schedule
        if deadline is not None and time.perf_counter() >= deadline:
            state.status = "time-limit"
            _record(state, it, solve_sp, schedule, start)
            break
        schedule, lb = solve_master(state, remaining(), config.master_gap)
        state.LB = max(state.LB, lb)
        _record(state, it, solve_sp, schedule, start)
        if state.gap < config.epsilon:
            state.status = "optimal" if not (config.heuristic and state.heuristic) else "converged-heuristic"
            break
        if config.max_iterations is not None and it >= config.max_iterations:
            state.status = "iteration-limit"
            break
    state.wall_time = time.perf_counter() - start
    return state


def _record(state: DecompositionState, it: int, solved: bool, schedule: RevisionSchedule, start: float) -> None:
    stages = ";".join("-".join(map(str, ys)) or "none" for ys in schedule.revision_stages())
    rec = IterationRecord(it, state.LB, state.UB, state.RUB, state.gap, len(state.lshaped),
                          len(state.benders), len(state.heuristic), solved, stages,
                          time.perf_counter() - start)
    state.log.append(rec)
    logger.info("iter %d LB=%.6g UB=%.6g gap=%.3g", it, state.LB, state.UB, state.gap)


def cut_violations(cuts: Iterable[Cut], values: dict[RevisionSchedule, float], tol: float = 1e-6) -> list[tuple[Cut, RevisionSchedule, float]]:
    """Cuts whose right-hand side exceeds the true value at some schedule."""
    bad = []
    for cut in cuts:
        if cut.theta_coef == 0:
            continue
        for sched, val in values.items():
            excess = cut.rhs(sched) - val
            if excess > tol * max(1.0, abs(val)):
                bad.append((cut, sched, excess))
    return bad
