"""Instance data and formulation builders for adaptive multistage programs.

An :class:`AmspInstance` describes a generic scenario-tree program with a
state block ``x_n`` (length ``I``) and a stage block ``y_n`` (length ``J``) at
every node.  Linking rows of node ``n`` may reference ``x`` and ``y`` of any
node on the root path ``P(n)``.  Variable domains are boxes plus integrality
flags; anything else is expressed as extra linking rows.

Builders return :class:`~amsp.solver_backend.LinearModel` objects with the
variable blocks ``x`` (``N x I``), ``y`` (``N x J``) and, for the adaptive
formulations, ``r`` (``I x T``) registered in ``model.blocks``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Any, Iterator, NamedTuple, Sequence

import numpy as np

from .nac import NacSet, generate_nacs, normalize_regime
from .scenario_tree import ScenarioTree
from .solver_backend import (
    DEFAULT_GAP, LinearModel, SolveOutcome, solve_lp_with_duals, solve_milp, values_close,
)

SENSE_CODES = {">=": 1, "<=": -1, "==": 0}


class InstanceError(ValueError):
    """Inconsistent instance data."""


class InconsistencyError(ArithmeticError):
    """Optimal values violate an ordering that must hold."""


def _frozen(arr, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class LinkingRows:
    """Coordinate storage for ``sum_{m in P(n)} C_nm x_m + D_nm y_m (sense) d_n``.

    ``node``, ``sense`` and ``rhs`` have one entry per row; the ``x_*`` and
    ``y_*`` arrays hold one entry per nonzero, with ``*_row`` pointing into the
    row arrays and ``*_node`` naming the node whose variable is referenced.
    """

    node: np.ndarray
    sense: np.ndarray
    rhs: np.ndarray
    x_row: np.ndarray
    x_node: np.ndarray
    x_var: np.ndarray
    x_coef: np.ndarray
    y_row: np.ndarray
    y_node: np.ndarray
    y_var: np.ndarray
    y_coef: np.ndarray

    def __len__(self) -> int:
        return int(self.node.shape[0])

    def select(self, keep: np.ndarray) -> "LinkingRows":
        """Rows where ``keep`` is true, renumbered."""
        keep = np.asarray(keep, dtype=bool)
        new_id = np.cumsum(keep) - 1
        xk = keep[self.x_row]
        yk = keep[self.y_row]
        return LinkingRows(
            _frozen(self.node[keep], np.int64), _frozen(self.sense[keep], np.int8),
            _frozen(self.rhs[keep], float),
            _frozen(new_id[self.x_row[xk]], np.int64), _frozen(self.x_node[xk], np.int64),
            _frozen(self.x_var[xk], np.int64), _frozen(self.x_coef[xk], float),
            _frozen(new_id[self.y_row[yk]], np.int64), _frozen(self.y_node[yk], np.int64),
            _frozen(self.y_var[yk], np.int64), _frozen(self.y_coef[yk], float),
        )


class RowBuilder:
    """Accumulates linking rows for an instance generator.

    Terms are ``(node, var, coef)`` triples.  ``add_block`` takes parallel
    arrays and is the fast path for generators that build many rows at once.
    """

    def __init__(self):
        self._node, self._sense, self._rhs = [], [], []
        self._x = [[], [], [], []]
        self._y = [[], [], [], []]
        self._n = 0

    def add(self, node: int, sense: str, rhs: float,
            x_terms: Sequence[tuple[int, int, float]] = (),
            y_terms: Sequence[tuple[int, int, float]] = ()) -> int:
        rid = self._n
        self._node.append(np.array([node]))
        self._sense.append(np.array([SENSE_CODES[sense]]))
        self._rhs.append(np.array([rhs], dtype=float))
        for store, terms in ((self._x, x_terms), (self._y, y_terms)):
            if terms:
                nd, var, coef = zip(*terms)
                store[0].append(np.full(len(nd), rid))
                store[1].append(np.asarray(nd))
                store[2].append(np.asarray(var))
                store[3].append(np.asarray(coef, dtype=float))
        self._n += 1
        return rid

    def add_block(self, node, sense: str, rhs, x_terms=None, y_terms=None) -> np.ndarray:
        """Add ``k`` rows; ``x_terms``/``y_terms`` are ``(local_row, node, var, coef)`` arrays."""
        node = np.atleast_1d(np.asarray(node, dtype=np.int64))
        k = node.shape[0]
        ids = np.arange(self._n, self._n + k)
        self._node.append(node)
        self._sense.append(np.full(k, SENSE_CODES[sense]))
        self._rhs.append(np.broadcast_to(np.asarray(rhs, dtype=float), (k,)))
        for store, terms in ((self._x, x_terms), (self._y, y_terms)):
            if terms is not None:
                row, nd, var, coef = (np.asarray(a).ravel() for a in terms)
                store[0].append(row + self._n)
                store[1].append(nd)
                store[2].append(var)
                store[3].append(coef.astype(float))
        self._n += k
        return ids

    def build(self) -> LinkingRows:
        cat = lambda parts, dt: _frozen(np.concatenate(parts) if parts else np.empty(0), dt)
        return LinkingRows(
            cat(self._node, np.int64), cat(self._sense, np.int8), cat(self._rhs, float),
            cat(self._x[0], np.int64), cat(self._x[1], np.int64), cat(self._x[2], np.int64),
            cat(self._x[3], float),
            cat(self._y[0], np.int64), cat(self._y[1], np.int64), cat(self._y[2], np.int64),
            cat(self._y[3], float),
        )


@dataclass(frozen=True)
class AmspInstance:
    """Immutable data of one adaptive multistage program.

    ``a`` is ``N x I`` and ``b`` is ``N x J`` (row ``n-1`` for node ``n``);
    bounds are ``N x I`` / ``N x J``; integrality flags are per component.
    """

    tree: ScenarioTree
    a: np.ndarray
    b: np.ndarray
    rows: LinkingRows
    x_lb: np.ndarray
    x_ub: np.ndarray
    x_integer: np.ndarray
    y_lb: np.ndarray
    y_ub: np.ndarray
    y_integer: np.ndarray
    xbar: np.ndarray
    mu: int = 0
    state_names: tuple[str, ...] = ()
    stage_names: tuple[str, ...] = ()
    name: str = "instance"
    meta: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        N = self.tree.num_nodes
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.asarray(self.b, dtype=float)
        if a.shape[0] != N:
            raise InstanceError(f"a must have {N} rows, got shape {a.shape}")
        if b.ndim != 2 or b.shape[0] != N:
            raise InstanceError(f"b must have shape ({N}, J), got {b.shape}")
        I, J = a.shape[1], b.shape[1]
        if I < 1:
            raise InstanceError("at least one state variable is required")
        set_ = lambda k, v: object.__setattr__(self, k, v)
        set_("a", _frozen(a, float))
        set_("b", _frozen(b, float))
        for key, width in (("x_lb", I), ("x_ub", I), ("y_lb", J), ("y_ub", J)):
            val = np.asarray(getattr(self, key), dtype=float)
            try:
                set_(key, _frozen(np.broadcast_to(val, (N, width)), float))
            except ValueError:
                raise InstanceError(f"{key} cannot be broadcast to ({N}, {width})") from None
        for key, width in (("x_integer", I), ("y_integer", J)):
            val = np.asarray(getattr(self, key), dtype=bool)
            if val.shape not in ((), (width,)):
                raise InstanceError(f"{key} must have length {width}")
            set_(key, _frozen(np.broadcast_to(val, (width,)), bool))
        xbar = np.asarray(self.xbar, dtype=float)
        if xbar.shape not in ((), (I,)):
            raise InstanceError(f"xbar must have length {I}")
        xbar = np.broadcast_to(xbar, (I,))
        if np.any(xbar <= 0) or not np.all(np.isfinite(xbar)):
            raise InstanceError("xbar must be positive and finite")
        set_("xbar", _frozen(xbar, float))
        if np.any(self.x_lb > self.x_ub) or np.any(self.y_lb > self.y_ub):
            raise InstanceError("a lower bound exceeds its upper bound")
        if int(self.mu) != self.mu or not 0 <= self.mu <= self.tree.num_stages - 1:
            raise InstanceError(f"mu={self.mu} outside 0..{self.tree.num_stages - 1}")
        set_("mu", int(self.mu))
        if not self.state_names:
            set_("state_names", tuple(f"x{i + 1}" for i in range(I)))
        if not self.stage_names:
            set_("stage_names", tuple(f"y{j + 1}" for j in range(J)))
        if len(self.state_names) != I or len(self.stage_names) != J:
            raise InstanceError("variable name lists do not match I and J")
        self._check_rows(I, J)

    def _check_rows(self, I: int, J: int) -> None:
        rows, N = self.rows, self.tree.num_nodes
        if np.any((rows.node < 1) | (rows.node > N)):
            raise InstanceError("linking row attached to an unknown node")
        if not np.isin(rows.sense, (-1, 0, 1)).all():
            raise InstanceError("row senses must be +1, -1 or 0")
        for kind, width in (("x", I), ("y", J)):
            r = getattr(rows, f"{kind}_row")
            nd = getattr(rows, f"{kind}_node")
            var = getattr(rows, f"{kind}_var")
            if r.size == 0:
                continue
            if r.min() < 0 or r.max() >= len(rows):
                raise InstanceError(f"{kind}-term points to a missing row")
            if var.min() < 0 or var.max() >= width:
                raise InstanceError(f"{kind}-term references a component outside 0..{width - 1}")
            if nd.min() < 1 or nd.max() > N:
                raise InstanceError(f"{kind}-term references an unknown node")
            if not _on_path(self.tree, nd, rows.node[r]).all():
                raise InstanceError(f"{kind}-term references a node off the root path of its row")

    @property
    def num_states(self) -> int:
        return self.a.shape[1]

    @property
    def num_stage_vars(self) -> int:
        return self.b.shape[1]

    @property
    def state_binary(self) -> bool:
        """True when every state component is integer within [0, 1]."""
        return bool(self.x_integer.all() and (self.x_lb >= 0).all() and (self.x_ub <= 1).all())

    def with_mu(self, mu: int) -> "AmspInstance":
        return replace(self, mu=mu)

    def truncate(self, num_stages: int) -> "AmspInstance":
        """Restriction to the first ``num_stages`` stages; ``mu`` is capped at the new horizon."""
        tree = self.tree.truncated(num_stages)
        N = tree.num_nodes
        keep = self.rows.node <= N
        return replace(
            self, tree=tree, a=self.a[:N], b=self.b[:N], rows=self.rows.select(keep),
            x_lb=self.x_lb[:N], x_ub=self.x_ub[:N], y_lb=self.y_lb[:N], y_ub=self.y_ub[:N],
            mu=min(self.mu, num_stages - 1), meta=dict(self.meta, truncated_from=self.tree.num_stages),
        )


def _on_path(tree: ScenarioTree, ref: np.ndarray, owner: np.ndarray) -> np.ndarray:
    """Whether node ``ref`` lies on ``P(owner)``, elementwise."""
    stages = tree.stage_array()
    s_ref, s_own = stages[ref - 1], stages[owner - 1]
    ok = s_ref <= s_own
    cur = owner.copy()
    B = tree.branching
    for _ in range(int((s_own - s_ref).max(initial=0))):
        move = stages[cur - 1] > s_ref
        cur = np.where(move, (cur - 2) // B + 1, cur)
    return ok & (cur == ref)


class RevisionSchedule:
    """Cumulative revision counts ``r[i, t-1]`` for state ``i`` and stage ``t``."""

    __slots__ = ("_r",)

    def __init__(self, matrix, mu: int | None = None):
        r = np.array(matrix, dtype=np.int64, ndmin=2)
        if r.ndim != 2 or r.shape[1] < 1:
            raise ValueError("a schedule is an I x T integer matrix")
        if np.any(r[:, 0] != 0):
            raise ValueError("r must be zero at the first stage")
        steps = np.diff(r, axis=1)
        if np.any((steps != 0) & (steps != 1)):
            raise ValueError("r must increase by 0 or 1 between consecutive stages")
        if mu is not None and np.any(r[:, -1] > mu):
            raise ValueError(f"schedule uses more than mu={mu} revisions")
        r.setflags(write=False)
        self._r = r

    @property
    def matrix(self) -> np.ndarray:
        return self._r

    @property
    def num_states(self) -> int:
        return self._r.shape[0]

    @property
    def num_stages(self) -> int:
        return self._r.shape[1]

    @property
    def revisions(self) -> np.ndarray:
        return self._r[:, -1].copy()

    def revision_stages(self) -> list[tuple[int, ...]]:
        """``Y_i(r)`` for each state: stages where ``r`` steps up."""
        steps = np.diff(self._r, axis=1)
        return [tuple(int(t) + 2 for t in np.nonzero(row)[0]) for row in steps]

    def gap(self, state, stage, ancestor_stage) -> np.ndarray:
        return self._r[state, stage - 1] - self._r[state, ancestor_stage - 1]

    @classmethod
    def from_stages(cls, stages: Sequence[Sequence[int]], num_stages: int) -> "RevisionSchedule":
        r = np.zeros((len(stages), num_stages), dtype=np.int64)
        for i, ys in enumerate(stages):
            for t in ys:
                if not 2 <= t <= num_stages:
                    raise ValueError(f"revision stage {t} outside 2..{num_stages}")
                r[i, t - 1:] += 1
        if np.any(np.diff(r, axis=1) > 1):
            raise ValueError("duplicate revision stage")
        return cls(r)

    @classmethod
    def zeros(cls, num_states: int, num_stages: int) -> "RevisionSchedule":
        return cls(np.zeros((num_states, num_stages), dtype=np.int64))

    @classmethod
    def flexible(cls, num_states: int, num_stages: int) -> "RevisionSchedule":
        """Revision at every stage after the first."""
        row = np.arange(num_stages)
        return cls(np.tile(row, (num_states, 1)))

    @staticmethod
    def count(num_states: int, num_stages: int, mu: int, binding: bool = True) -> int:
        from math import comb
        per = comb(num_stages - 1, mu) if binding else sum(comb(num_stages - 1, k) for k in range(mu + 1))
        return per ** num_states

    @classmethod
    def enumerate(cls, num_states: int, num_stages: int, mu: int,
                  binding: bool = True) -> Iterator["RevisionSchedule"]:
        """All schedules with exactly ``mu`` (or, if not binding, at most ``mu``) revisions per state."""
        sizes = [mu] if binding else range(mu + 1)
        per_state = [c for k in sizes for c in itertools.combinations(range(2, num_stages + 1), k)]
        for combo in itertools.product(per_state, repeat=num_states):
            yield cls.from_stages(combo, num_stages)

    def __eq__(self, other) -> bool:
        return isinstance(other, RevisionSchedule) and np.array_equal(self._r, other._r)

    def __hash__(self) -> int:
        return hash(self._r.tobytes() + bytes(self._r.shape))

    def __repr__(self) -> str:
        return f"RevisionSchedule(stages={self.revision_stages()})"


# -- formulation builders -----------------------------------------------------

def _base_model(inst: AmspInstance, name: str, relaxed: bool = False) -> LinearModel:
    tree = inst.tree
    N, I, J = tree.num_nodes, inst.num_states, inst.num_stage_vars
    p = tree.probabilities[:, None]
    m = LinearModel(name)
    x = m.add_vars((N, I), lb=inst.x_lb, ub=inst.x_ub, obj=p * inst.a,
                   integer=np.broadcast_to(inst.x_integer & (not relaxed), (N, I)), block="x")
    y = m.add_vars((N, J), lb=inst.y_lb, ub=inst.y_ub, obj=p * inst.b,
                   integer=np.broadcast_to(inst.y_integer & (not relaxed), (N, J)), block="y")
    rows = inst.rows
    m.add_sparse_rows(
        np.concatenate([rows.x_row, rows.y_row]),
        np.concatenate([x[rows.x_node - 1, rows.x_var], y[rows.y_node - 1, rows.y_var]]),
        np.concatenate([rows.x_coef, rows.y_coef]),
        rows.sense, rows.rhs, block="link",
    )
    m.tags["instance"] = inst.name
    return m


def build_msp(instance: AmspInstance) -> LinearModel:
    """Fully adaptive multistage program: no non-anticipativity beyond the tree."""
    return _base_model(instance, "msp")


def build_2sp(instance: AmspInstance) -> LinearModel:
    """State decisions fixed per stage, via chained equalities ``x_m = x_{m+1}``."""
    m = _base_model(instance, "2sp")
    x = m.blocks["x"]
    tree = instance.tree
    left = np.concatenate([np.arange(r.start, r.stop - 1) for r in map(tree.stage_range, tree.stages)])
    if left.size:
        I = instance.num_states
        k = left.size * I
        cols = np.stack([x[left - 1].ravel(), x[left].ravel()], axis=1)
        vals = np.tile([1.0, -1.0], (k, 1))
        m.add_rows(cols, vals, "==", 0.0, block="stage_eq")
    return m


def _add_revision_block(m: LinearModel, inst: AmspInstance, relax_r: bool,
                        force_binding: bool) -> np.ndarray:
    I, T, mu = inst.num_states, inst.tree.num_stages, inst.mu
    cap = np.minimum(np.arange(T), mu).astype(float)
    lb = np.zeros((I, T))
    if force_binding:
        lb[:, -1] = mu
    r = m.add_vars((I, T), lb=lb, ub=np.broadcast_to(cap, (I, T)), integer=not relax_r, block="r")
    if T > 1:
        cols = np.stack([r[:, 1:].ravel(), r[:, :-1].ravel()], axis=1)
        vals = np.tile([1.0, -1.0], (cols.shape[0], 1))
        m.add_rows(cols, vals, ">=", 0.0, block="r_step")
        m.add_rows(cols, vals, "<=", 1.0, block="r_step")
    return r


def _nac_columns(m: LinearModel, inst: AmspInstance, nacs: NacSet):
    x = m.blocks["x"]
    return x[nacs.left - 1, nacs.state], x[nacs.right - 1, nacs.state], inst.xbar[nacs.state]


def build_ams(instance: AmspInstance, regime: str = "reduced", relax_r: bool = False,
              force_binding: bool = False) -> LinearModel:
    """Adaptive program with revision budget ``instance.mu``.

    ``regime`` selects the NAC family (``full``, ``reduced`` or the
    intermediate ``prop5`` / ``prop5+6``).  ``relax_r`` drops integrality of
    the revision counters and ``force_binding`` fixes ``r[:, T] = mu``.
    """
    regime = normalize_regime(regime)
    m = _base_model(instance, f"ams[{regime},mu={instance.mu}]")
    r = _add_revision_block(m, instance, relax_r, force_binding)
    nacs = generate_nacs(instance.tree, regime, instance.mu, instance.num_states)
    if len(nacs):
        xl, xr, xbar = _nac_columns(m, instance, nacs)
        cols = np.stack([xl, xr, r[nacs.state, nacs.stage - 1], r[nacs.state, nacs.ancestor_stage - 1]], axis=1)
        vals = np.stack([np.ones_like(xbar), -np.ones_like(xbar), xbar, -xbar], axis=1)
        m.add_rows(cols, vals, ">=", 0.0, block="nac")
    m.tags["nacs"] = nacs
    return m


class FixedRevisionModel:
    """Subproblem with the revision schedule fixed, reusable across schedules.

    NAC rows cover the last-common-ancestor links of every ancestor stage, so
    the model is exact for any schedule (binding or not) and only the
    right-hand sides ``-xbar * (r[t'] - r[t_a])`` depend on the schedule.
    """

    def __init__(self, instance: AmspInstance, relaxed: bool = False):
        self.instance = instance
        self.relaxed = relaxed
        m = _base_model(instance, "rsp" if relaxed else "sp", relaxed=relaxed)
        nacs = generate_nacs(instance.tree, "prop5+6", 0, instance.num_states)
        self.nacs = nacs
        self.nac_rows = np.empty(0, dtype=np.int64)
        if len(nacs):
            xl, xr, _ = _nac_columns(m, instance, nacs)
            cols = np.stack([xl, xr], axis=1)
            vals = np.tile([1.0, -1.0], (len(nacs), 1))
            self.nac_rows = m.add_rows(cols, vals, ">=", 0.0, block="nac")
        m.tags["nacs"] = nacs
        self.model = m
        self.schedule: RevisionSchedule | None = None

    def gaps(self, schedule: RevisionSchedule) -> np.ndarray:
        n = self.nacs
        return schedule.matrix[n.state, n.stage - 1] - schedule.matrix[n.state, n.ancestor_stage - 1]

    def set_schedule(self, schedule: RevisionSchedule) -> LinearModel:
        inst = self.instance
        if schedule.matrix.shape != (inst.num_states, inst.tree.num_stages):
            raise ValueError(f"schedule shape {schedule.matrix.shape} does not match the instance")
        if len(self.nacs):
            self.model.set_rhs(self.nac_rows, -inst.xbar[self.nacs.state] * self.gaps(schedule))
        self.schedule = schedule
        return self.model

    def solve(self, schedule: RevisionSchedule, time_limit: float | None = None,
              gap_tol: float = DEFAULT_GAP) -> SolveOutcome:
        self.set_schedule(schedule)
        if self.relaxed:
            return solve_lp_with_duals(self.model, time_limit)
        return solve_milp(self.model, time_limit, gap_tol)


def fix_revisions(instance: AmspInstance, schedule: RevisionSchedule, relaxed: bool = False) -> LinearModel:
    """Model whose optimum is ``Q(schedule)``, or its LP relaxation if ``relaxed``."""
    if schedule.revisions.max(initial=0) > instance.mu:
        raise ValueError(f"schedule exceeds the revision budget mu={instance.mu}")
    return FixedRevisionModel(instance, relaxed).set_schedule(schedule)


def schedule_from_solution(model: LinearModel, x: np.ndarray) -> RevisionSchedule:
    r = model.blocks["r"]
    return RevisionSchedule(np.rint(x[r]).astype(np.int64))


def solve_model(model: LinearModel, time_limit: float | None = None,
                gap_tol: float = DEFAULT_GAP) -> SolveOutcome:
    return solve_milp(model, time_limit, gap_tol)


FORMULATIONS = ("msp", "2sp", "ams-full", "ams-reduced")


def build(instance: AmspInstance, formulation: str) -> LinearModel:
    if formulation == "msp":
        return build_msp(instance)
    if formulation == "2sp":
        return build_2sp(instance)
    if formulation in ("ams-full", "full"):
        return build_ams(instance, "full")
    if formulation in ("ams-reduced", "reduced", "ams"):
        return build_ams(instance, "reduced")
    raise ValueError(f"unknown formulation {formulation!r}; choose from {FORMULATIONS}")


class Vams(NamedTuple):
    value: float
    degenerate: bool


def vams(z_2sp: float, z_ams: float, z_msp: float, rel: float = 1e-6) -> Vams:
    """Share of the two-stage/multistage gap recovered by the adaptive model, in percent.

    When the two references coincide the flexibility gap is empty and any
    schedule attains it; 100 is returned with ``degenerate=True``.
    """
    if z_ams > z_2sp and not values_close(z_ams, z_2sp, rel):
        raise InconsistencyError(f"adaptive value {z_ams} exceeds the two-stage value {z_2sp}")
    if z_msp > z_ams and not values_close(z_msp, z_ams, rel):
        raise InconsistencyError(f"multistage value {z_msp} exceeds the adaptive value {z_ams}")
    if values_close(z_2sp, z_msp, rel):
        return Vams(100.0, True)
    val = (z_2sp - z_ams) / (z_2sp - z_msp) * 100.0
    return Vams(min(100.0, max(0.0, val)), False)
