"""Experiment runner behind the ``amsp`` command line.

Every command returns a :class:`RunReport`, a list of flat rows that is
written as CSV.  Rows carry the seed, a hash of the experiment config, the
solver status and gap so a report can be traced back to how it was made.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .decomposition import DecompositionConfig, run as run_decomposition
from .io import load_instance
from .model import (
    AmspInstance, FixedRevisionModel, RevisionSchedule, build_2sp, build_ams, build_msp,
    schedule_from_solution, vams,
)
from .nac import count_cells, normalize_regime, total_count
from .problems import PROBLEMS, generate
from .scenario_tree import ScenarioTree
from .solver_backend import DEFAULT_GAP, SolverError, Status, solve_milp, values_close

logger = logging.getLogger(__name__)

METHODS = ("direct-full", "direct-reduced", "decomposition")
ENUMERATION_GUARD = 10_000


class ParameterError(ValueError):
    """Invalid experiment parameters."""


class GuardExceeded(RuntimeError):
    """A requested enumeration is larger than the configured guard."""


@dataclass
class ExperimentConfig:
    problem: str = "lotsizing"
    T: int = 4
    B: int = 2
    I: int = 1
    mu: list[int] | None = None           # None means every budget 0..T-1
    seeds: list[int] = field(default_factory=lambda: [0])
    methods: list[str] = field(default_factory=lambda: ["direct-reduced"])
    epsilon: float = 1e-3
    horizon_cut: int = 2
    heuristic: bool = True
    rub_gate: bool = True
    time_limit: float | None = None
    gap: float = DEFAULT_GAP
    instance_path: str | None = None
    overrides: dict[str, Any] = field(default_factory=dict)
    workers: int = 1

    def validate(self) -> None:
        if self.problem not in PROBLEMS + ("file",):
            raise ParameterError(f"unknown problem {self.problem!r}")
        if self.problem == "file":
            if not self.instance_path:
                raise ParameterError("problem 'file' needs an instance path")
        elif self.T < 1 or self.B < 1 or self.I < 1:
            raise ParameterError("T, B and I must be positive")
        if not self.seeds:
            raise ParameterError("at least one seed is required")
        for m in self.methods:
            if m not in METHODS:
                raise ParameterError(f"unknown method {m!r}; choose from {METHODS}")
        if self.mu is not None:
            T = self.horizon()
            bad = [m for m in self.mu if not 0 <= m <= T - 1]
            if bad:
                raise ParameterError(f"mu values {bad} outside 0..{T - 1}")
        if self.epsilon <= 0 or self.gap < 0 or self.workers < 1:
            raise ParameterError("epsilon must be positive, gap non-negative, workers at least 1")

    def horizon(self) -> int:
        if self.problem == "file" and self.instance_path:
            return int(json.loads(Path(self.instance_path).read_text())["tree"]["T"])
        return self.T

    def mu_values(self) -> list[int]:
        return list(range(self.horizon())) if self.mu is None else list(self.mu)

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha1(blob.encode()).hexdigest()[:12]

    def decomposition(self) -> DecompositionConfig:
        return DecompositionConfig(epsilon=self.epsilon, horizon_cut=self.horizon_cut,
                                   heuristic=self.heuristic, rub_gate=self.rub_gate,
                                   time_limit=self.time_limit, subproblem_gap=self.gap)

    def instance(self, seed: int, mu: int = 0) -> AmspInstance:
        if self.problem == "file":
            return load_instance(self.instance_path).with_mu(mu)
        return generate(self.problem, ScenarioTree(self.T, self.B), seed, self.I, mu, self.overrides)


@dataclass
class RunReport:
    kind: str
    rows: list[dict[str, Any]] = field(default_factory=list)
    summary: list[dict[str, Any]] = field(default_factory=list)

    def fieldnames(self, rows: Sequence[dict]) -> list[str]:
        names: list[str] = []
        for r in rows:
            names.extend(k for k in r if k not in names)
        return names

    def to_csv(self, summary: bool = False) -> str:
        rows = self.summary if summary else self.rows
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.fieldnames(rows), lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _fmt(v) for k, v in r.items()})
        return buf.getvalue()

    def write(self, path: str | Path | None) -> str:
        text = self.to_csv()
        if self.summary:
            text += "\n" + self.to_csv(summary=True)
        if path is not None:
            Path(path).write_text(text)
        return text


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.10g}"
    return v


def _stages_text(schedule: RevisionSchedule | None) -> str:
    if schedule is None:
        return ""
    return ";".join("-".join(map(str, ys)) or "none" for ys in schedule.revision_stages())


class MethodResult(NamedTuple):
    objective: float
    status: str
    gap: float
    schedule: RevisionSchedule | None
    wall_time: float
    iterations: int = 0


def solve_reference(instance: AmspInstance, which: str, time_limit=None, gap=DEFAULT_GAP) -> MethodResult:
    model = build_msp(instance) if which == "msp" else build_2sp(instance)
    out = solve_milp(model, time_limit, gap)
    return MethodResult(out.objective, out.status.value, out.mip_gap, None, out.wall_time)


def solve_method(instance: AmspInstance, method: str, config: ExperimentConfig) -> MethodResult:
    start = time.perf_counter()
    if method == "decomposition":
        state = run_decomposition(instance, config.decomposition())
        status = "optimal" if state.status in ("optimal", "converged-heuristic") else state.status
        return MethodResult(state.UB, status, state.gap, state.incumbent,
                            time.perf_counter() - start, len(state.log))
    regime = "full" if method == "direct-full" else "reduced"
    model = build_ams(instance, regime)
    out = solve_milp(model, config.time_limit, config.gap)
    sched = schedule_from_solution(model, out.x) if out.x is not None else None
    return MethodResult(out.objective, out.status.value, out.mip_gap, sched, time.perf_counter() - start)


def _pool_map(fn: Callable, items: Iterable, workers: int) -> list:
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- commands -----------------------------------------------------------------

class NacCountReport(NamedTuple):
    matrix: np.ndarray
    total: int
    regime: str
    params: dict[str, int]

    def to_csv(self) -> str:
        T = self.matrix.shape[0]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["ancestor_stage"] + [f"t{t}" for t in range(1, T + 1)])
        for ta in range(1, T):
            w.writerow([ta] + self.matrix[ta - 1].tolist())
        w.writerow(["total", self.total])
        return buf.getvalue()


def cmd_count_nacs(T: int, B: int, mu: int, I: int = 1, regime: str = "reduced") -> NacCountReport:
    try:
        tree = ScenarioTree(T, B)
        regime = normalize_regime(regime)
        cells = count_cells(tree, regime, mu) * I
        total = total_count(tree, regime, mu, I)
    except ValueError as exc:
        raise ParameterError(str(exc)) from None
    return NacCountReport(cells, total, regime, {"T": T, "B": B, "mu": mu, "I": I})


def _sweep_seed(args) -> list[dict[str, Any]]:
    config, seed = args
    chash = config.config_hash()
    base = config.instance(seed)
    z2 = solve_reference(base, "2sp", config.time_limit, config.gap)
    zm = solve_reference(base, "msp", config.time_limit, config.gap)
    refs_ok = z2.status == "optimal" and zm.status == "optimal"
    rows = []
    method = config.methods[0]
    for mu in config.mu_values():
        inst = base.with_mu(mu)
        res = solve_method(inst, method, config)
        ok = refs_ok and res.status == "optimal"
        v, degenerate = (vams(z2.objective, res.objective, zm.objective) if ok else (math.nan, False))
        rows.append({
            "seed": seed, "config_hash": chash, "problem": config.problem, "T": inst.tree.num_stages,
            "B": inst.tree.branching, "I": inst.num_states, "mu": mu, "method": method,
            "status": res.status, "gap": res.gap, "objective": res.objective,
            "z_2sp": z2.objective, "z_msp": zm.objective, "vams": v, "degenerate": degenerate,
            "valid": ok, "revision_stages": _stages_text(res.schedule), "wall_time": res.wall_time,
            "nacs_reduced": total_count(inst.tree, "reduced", mu, inst.num_states),
        })
    return rows


def cmd_vams_sweep(config: ExperimentConfig) -> RunReport:
    """Solve 2SP, MSP and the adaptive model for each budget; VAMS per seed and averaged."""
    config.validate()
    report = RunReport("vams-sweep")
    for rows in _pool_map(_sweep_seed, [(config, s) for s in config.seeds], config.workers):
        vals = [r["vams"] for r in rows if r["valid"]]
        if any(b < a - 1e-6 for a, b in zip(vals, vals[1:])):
            logger.warning("VAMS not monotone in mu for seed %s", rows[0]["seed"])
            for r in rows:
                r["valid"] = False
                r["status"] = "non-monotone"
        report.rows.extend(rows)
    for mu in config.mu_values():
        good = [r for r in report.rows if r["mu"] == mu and r["valid"]]
        report.summary.append({
            "mu": mu, "runs": len(good),
            "mean_vams": float(np.mean([r["vams"] for r in good])) if good else math.nan,
            "mean_objective": float(np.mean([r["objective"] for r in good])) if good else math.nan,
            "mean_wall_time": float(np.mean([r["wall_time"] for r in good])) if good else math.nan,
        })
    return report


def cmd_enumerate_revisions(config: ExperimentConfig, guard: int = ENUMERATION_GUARD) -> RunReport:
    """Evaluate every schedule with exactly ``mu`` revisions per state, for each requested ``mu``."""
    config.validate()
    report = RunReport("enumerate-revisions")
    T = config.horizon()
    I = config.instance(config.seeds[0]).num_states
    for mu in config.mu_values():
        n = RevisionSchedule.count(I, T, mu)
        if n > guard:
            raise GuardExceeded(f"{n} schedules for T={T}, I={I}, mu={mu} exceed the guard of {guard}")
    chash = config.config_hash()
    for seed in config.seeds:
        base = config.instance(seed)
        z2 = solve_reference(base, "2sp", config.time_limit, config.gap)
        zm = solve_reference(base, "msp", config.time_limit, config.gap)
        exact = FixedRevisionModel(base.with_mu(T - 1))
        for mu in config.mu_values():
            inst = base.with_mu(mu)
            direct = solve_method(inst, "direct-reduced", config)
            rows = []
            for sched in RevisionSchedule.enumerate(I, T, mu, binding=True):
                out = exact.solve(sched, config.time_limit, config.gap)
                ok = out.status is Status.OPTIMAL and z2.status == "optimal" and zm.status == "optimal"
                v = vams(z2.objective, out.objective, zm.objective).value if ok else math.nan
                rows.append({
                    "seed": seed, "config_hash": chash, "mu": mu, "revision_stages": _stages_text(sched),
                    "status": out.status.value, "gap": out.mip_gap, "objective": out.objective, "vams": v,
                    "direct_objective": direct.objective, "best": False,
                })
            best = min(r["objective"] for r in rows)
            for r in rows:
                r["best"] = values_close(r["objective"], best)
            report.rows.extend(rows)
            report.summary.append({
                "seed": seed, "mu": mu, "schedules": len(rows), "best_objective": best,
                "direct_objective": direct.objective,
                "agree": values_close(best, direct.objective, 1e-6),
                "best_vams": max(r["vams"] for r in rows),
                "best_schedules": " ".join(r["revision_stages"] for r in rows if r["best"]),
            })
    return report


def _compare_task(args) -> list[dict[str, Any]]:
    config, seed, mu = args
    inst = config.instance(seed, mu)
    chash = config.config_hash()
    results = {m: solve_method(inst, m, config) for m in config.methods}
    ref = results.get("direct-reduced") or next(iter(results.values()))
    rows = []
    for m, res in results.items():
        rows.append({
            "seed": seed, "config_hash": chash, "problem": config.problem, "T": inst.tree.num_stages,
            "B": inst.tree.branching, "I": inst.num_states, "mu": mu, "method": m, "status": res.status,
            "gap": res.gap, "objective": res.objective, "wall_time": res.wall_time,
            "iterations": res.iterations, "revision_stages": _stages_text(res.schedule),
            "agrees": values_close(res.objective, ref.objective, config.epsilon),
            "time_ratio": res.wall_time / ref.wall_time if ref.wall_time > 0 else math.nan,
            "nacs": total_count(inst.tree, "full" if m == "direct-full" else "reduced", mu, inst.num_states),
        })
    return rows


def cmd_compare_methods(config: ExperimentConfig) -> RunReport:
    """Run each method on the same instances; report agreement and wall-time ratios."""
    config.validate()
    report = RunReport("compare")
    tasks = [(config, s, mu) for s in config.seeds for mu in config.mu_values()]
    for rows in _pool_map(_compare_task, tasks, config.workers):
        report.rows.extend(rows)
    for m in config.methods:
        mine = [r for r in report.rows if r["method"] == m]
        report.summary.append({
            "method": m, "runs": len(mine),
            "non_optimal": sum(r["status"] != "optimal" for r in mine),
            "mean_wall_time": float(np.mean([r["wall_time"] for r in mine])) if mine else math.nan,
            "all_agree": all(r["agrees"] for r in mine),
        })
    return report


def cmd_solve(config: ExperimentConfig, log_path: str | Path | None = None) -> RunReport:
    config.validate()
    report = RunReport("solve")
    method = config.methods[0]
    for seed in config.seeds:
        for mu in config.mu_values():
            inst = config.instance(seed, mu)
            if method == "decomposition":
                start = time.perf_counter()
                state = run_decomposition(inst, config.decomposition())
                if log_path is not None:
                    Path(log_path).write_text(state.log_csv())
                res = MethodResult(state.UB, state.status, state.gap, state.incumbent,
                                   time.perf_counter() - start, len(state.log))
            else:
                res = solve_method(inst, method, config)
            if res.status in (Status.INFEASIBLE.value, Status.UNBOUNDED.value,
                              Status.TIME_LIMIT_NO_SOLUTION.value):
                raise SolverError(f"{inst.name} (mu={mu}): {res.status}")
            report.rows.append({
                "seed": seed, "config_hash": config.config_hash(), "instance": inst.name, "mu": mu,
                "method": method, "status": res.status, "gap": res.gap, "objective": res.objective,
                "revision_stages": _stages_text(res.schedule), "iterations": res.iterations,
                "wall_time": res.wall_time,
            })
    return report
