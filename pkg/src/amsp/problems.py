"""Instance generators: stochastic lot-sizing and generation expansion planning.

Random draws use ``numpy.random.Generator(PCG64(seed))`` and are taken in a
fixed, vectorised order (documented on each sampler), so an instance is a
pure function of ``(tree, seed, overrides)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Mapping

import numpy as np

from .model import AmspInstance, InstanceError, RowBuilder
from .scenario_tree import ScenarioTree


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


# -- lot-sizing ---------------------------------------------------------------

@dataclass(frozen=True)
class LotSizingData:
    """Per-node data; ``alpha``/``beta`` are ``N x I``, ``h``/``d`` length ``N``."""

    tree: ScenarioTree
    alpha: np.ndarray
    beta: np.ndarray
    h: np.ndarray
    d: np.ndarray

    @property
    def num_sources(self) -> int:
        return self.alpha.shape[1]

    def big_m(self) -> np.ndarray:
        """Largest demand still to be served from each node on any path to the horizon."""
        tree = self.tree
        M = np.asarray(self.d, dtype=float).copy()
        for t in range(tree.num_stages - 1, 0, -1):
            rng = tree.stage_range(t)
            child = tree.stage_range(t + 1)
            kids = M[child.start - 1:child.stop - 1].reshape(len(rng), tree.branching)
            M[rng.start - 1:rng.stop - 1] += kids.max(axis=1)
        return M


def sample_lotsizing(tree: ScenarioTree, num_sources: int, seed: int) -> LotSizingData:
    """Draw ``alpha ~ U(100,250)``, ``beta ~ U(0,5)`` (both ``N x I``), ``h ~ U(0,5)``, ``d ~ U(0,100 I)``."""
    if num_sources < 1:
        raise ValueError("at least one production source is required")
    rng = make_rng(seed)
    N, I = tree.num_nodes, num_sources
    alpha = rng.uniform(100.0, 250.0, size=(N, I))
    beta = rng.uniform(0.0, 5.0, size=(N, I))
    h = rng.uniform(0.0, 5.0, size=N)
    d = rng.uniform(0.0, 100.0 * I, size=N)
    return LotSizingData(tree, alpha, beta, h, d)


def lotsizing_instance(data: LotSizingData, mu: int = 0, name: str = "lotsizing") -> AmspInstance:
    """Bind lot-sizing data: setups are the binary state, production and inventory the stage block.

    Stage vector per node is ``(y_1 .. y_I, s)``.
    """
    tree = data.tree
    N, I = tree.num_nodes, data.num_sources
    alpha, beta = np.asarray(data.alpha, float), np.asarray(data.beta, float)
    h, d = np.asarray(data.h, float), np.asarray(data.d, float)
    if alpha.shape != (N, I) or beta.shape != (N, I) or h.shape != (N,) or d.shape != (N,):
        raise InstanceError("lot-sizing arrays do not match the tree")
    if (alpha < 0).any() or (beta < 0).any() or (h < 0).any() or (d < 0).any():
        raise InstanceError("lot-sizing costs and demands must be non-negative")
    M = data.big_m()
    nodes = np.arange(1, N + 1)
    parent = tree.parent_array()
    rb = RowBuilder()
    # inventory balance: s_{a(n)} + sum_i y_in - s_n = d_n
    rows = np.arange(N)
    y_row = [np.repeat(rows, I), rows]
    y_node = [np.repeat(nodes, I), nodes]
    y_var = [np.tile(np.arange(I), N), np.full(N, I)]
    y_coef = [np.ones(N * I), -np.ones(N)]
    has_parent = parent > 0
    y_row.append(rows[has_parent])
    y_node.append(parent[has_parent])
    y_var.append(np.full(int(has_parent.sum()), I))
    y_coef.append(np.ones(int(has_parent.sum())))
    rb.add_block(nodes, "==", d, y_terms=tuple(np.concatenate(a) for a in (y_row, y_node, y_var, y_coef)))
    # setup linking: y_in - M_n x_in <= 0
    k = np.arange(N * I)
    node_k = np.repeat(nodes, I)
    var_k = np.tile(np.arange(I), N)
    rb.add_block(node_k, "<=", 0.0,
                 x_terms=(k, node_k, var_k, -np.repeat(M, I)),
                 y_terms=(k, node_k, var_k, np.ones(N * I)))
    b = np.column_stack([beta, h])
    return AmspInstance(
        tree=tree, a=alpha, b=b, rows=rb.build(),
        x_lb=0.0, x_ub=1.0, x_integer=True,
        y_lb=0.0, y_ub=np.inf, y_integer=False,
        xbar=np.ones(I), mu=mu,
        state_names=tuple(f"setup{i + 1}" for i in range(I)),
        stage_names=tuple(f"prod{i + 1}" for i in range(I)) + ("inventory",),
        name=name, meta={"problem": "lotsizing", "data": data, "big_m": M},
    )


def gen_lotsizing(tree: ScenarioTree, num_sources: int, seed: int, mu: int = 0) -> AmspInstance:
    data = sample_lotsizing(tree, num_sources, seed)
    return lotsizing_instance(data, mu, name=f"lotsizing-T{tree.num_stages}-B{tree.branching}-I{num_sources}-s{seed}")


# -- generation expansion planning --------------------------------------------

GENERATOR_TYPES = ("cc", "cc_ccs", "onshore_wind", "offshore_wind", "solar_pv")

# base-year table: nominal capacity, capital $/kW, fixed O&M $/kW-yr, variable O&M $/MWh
_BASE_TABLE = np.array([
    [418.0, 1084.0, 14.1, 2.6],
    [377.0, 2481.0, 27.6, 5.8],
    [200.0, 1265.0, 26.4, 0.0],
    [400.0, 4375.0, 110.0, 0.0],
    [150.0, 1313.0, 15.3, 0.0],
])


@dataclass(frozen=True)
class GepParams:
    """Tunable GEP constants.  Money in $, power in MW, energy in MWh."""

    nominal_mw: tuple[float, ...] = tuple(_BASE_TABLE[:, 0])
    capital_per_kw: tuple[float, ...] = tuple(_BASE_TABLE[:, 1])
    fixed_om_per_kw_year: tuple[float, ...] = tuple(_BASE_TABLE[:, 2])
    variable_om_per_mwh: tuple[float, ...] = tuple(_BASE_TABLE[:, 3])
    fuel_per_mwh: tuple[float, ...] = (40.0, 40.0, 0.0, 0.0, 0.0)
    capital_trend: tuple[float, ...] = (0.0, -0.05, -0.10, -0.10, -0.10)
    variable_trend: tuple[float, ...] = (0.10, 0.10, 0.0, 0.0, 0.0)
    cf_mean: tuple[float, ...] = (1.0, 1.0, 0.30, 0.60, 0.20)
    cf_sd: tuple[float, ...] = (0.0, 0.0, 0.10, 0.05, 0.10)
    subperiod_weights: tuple[float, ...] = (0.9, 1.1, 1.3, 1.5)
    subperiod_shares: tuple[float, ...] = (0.55, 0.40, 0.0495, 0.0005)
    hours_per_year: float = 8760.0
    root_demand: float = 1000.0
    growth_mean: float = 0.05
    growth_sd: float = 0.05
    interest: float = 0.05
    penalty_per_mwh: float = 10_000.0
    build_limit: int = 20
    initial_units: tuple[int, ...] | None = None
    money_scale: float = 1e-6  # objective reported in M$

    def validate(self) -> None:
        G = len(GENERATOR_TYPES)
        for f in ("nominal_mw", "capital_per_kw", "fixed_om_per_kw_year", "variable_om_per_mwh",
                  "fuel_per_mwh", "capital_trend", "variable_trend", "cf_mean", "cf_sd"):
            if len(getattr(self, f)) != G:
                raise InstanceError(f"{f} needs {G} entries")
        for f in ("capital_per_kw", "fixed_om_per_kw_year", "variable_om_per_mwh", "fuel_per_mwh", "cf_sd"):
            if min(getattr(self, f)) < 0:
                raise InstanceError(f"{f} must be non-negative")
        if min(self.nominal_mw) <= 0:
            raise InstanceError("nominal capacities must be positive")
        if len(self.subperiod_weights) != len(self.subperiod_shares):
            raise InstanceError("subperiod weights and shares differ in length")
        if not math.isclose(sum(self.subperiod_shares), 1.0, abs_tol=1e-9) or min(self.subperiod_shares) < 0:
            raise InstanceError("subperiod shares must be non-negative and sum to 1")
        if self.interest <= -1 or self.penalty_per_mwh < 0 or self.root_demand < 0:
            raise InstanceError("interest must exceed -1; penalty and demand must be non-negative")
        if self.build_limit < 1:
            raise InstanceError("build_limit must be at least 1")
        if self.initial_units is not None and (len(self.initial_units) != G or min(self.initial_units) < 0):
            raise InstanceError(f"initial_units needs {G} non-negative entries")
        if self.money_scale <= 0:
            raise InstanceError("money_scale must be positive")


@dataclass(frozen=True)
class GepData:
    """Sampled GEP scenario data plus derived per-node cost coefficients."""

    tree: ScenarioTree
    params: GepParams
    demand: np.ndarray            # N x K, MW
    capacity_factor: np.ndarray   # N x G x K, in [0, 1]
    hours: np.ndarray             # K
    initial_units: np.ndarray     # G
    capital: np.ndarray           # N x G, $/MW
    fixed_om: np.ndarray          # N x G, $/MW-year
    variable: np.ndarray          # N x G, $/MWh (variable O&M plus fuel)
    clamped: int = field(default=0, compare=False)


def sample_gep(tree: ScenarioTree, seed: int, overrides: Mapping[str, Any] | None = None) -> GepData:
    """Scenario data for the GEP.

    Draw order: growth factors ``N x K`` (root row unused), then capacity
    factors ``N x G x K``; both in node order.  Capacity factors are clamped
    to ``[0, 1]``.
    """
    params = GepParams()
    if overrides:
        unknown = set(overrides) - {f.name for f in fields(GepParams)}
        if unknown:
            raise InstanceError(f"unknown GEP overrides: {sorted(unknown)}")
        params = replace(params, **{k: (tuple(v) if isinstance(v, (list, np.ndarray)) else v)
                                    for k, v in overrides.items()})
    params.validate()
    rng = make_rng(seed)
    N, G = tree.num_nodes, len(GENERATOR_TYPES)
    w = np.asarray(params.subperiod_weights)
    K = w.size
    growth = rng.normal(params.growth_mean, params.growth_sd, size=(N, K))
    raw_cf = rng.normal(np.asarray(params.cf_mean)[None, :, None],
                        np.asarray(params.cf_sd)[None, :, None], size=(N, G, K))
    cf = np.clip(raw_cf, 0.0, 1.0)
    demand = np.empty((N, K))
    demand[0] = w * params.root_demand
    parent = tree.parent_array()
    for t in range(2, tree.num_stages + 1):
        r = tree.stage_range(t)
        idx = np.arange(r.start - 1, r.stop - 1)
        demand[idx] = (1.0 + growth[idx]) * demand[parent[idx] - 1]
    hours = np.asarray(params.subperiod_shares) * params.hours_per_year
    if params.initial_units is None:
        mean_demand = float(np.dot(np.asarray(params.subperiod_shares), demand[0]))
        x0 = np.zeros(G, dtype=np.int64)
        x0[0] = math.ceil(mean_demand / params.nominal_mw[0] - 1e-12)
    else:
        x0 = np.asarray(params.initial_units, dtype=np.int64)
    stage = tree.stage_array()[:, None].astype(float)
    cap_trend = (1.0 + np.asarray(params.capital_trend))[None, :] ** (stage - 1)
    var_trend = (1.0 + np.asarray(params.variable_trend))[None, :] ** (stage - 1)
    capital = 1000.0 * np.asarray(params.capital_per_kw)[None, :] * cap_trend
    fixed_om = np.broadcast_to(1000.0 * np.asarray(params.fixed_om_per_kw_year)[None, :], (N, G)).copy()
    variable = (np.asarray(params.variable_om_per_mwh) + np.asarray(params.fuel_per_mwh))[None, :] * var_trend
    return GepData(tree, params, demand, cf, hours, x0, capital, fixed_om, variable,
                   clamped=int(np.count_nonzero(raw_cf != cf)))


def gep_instance(data: GepData, mu: int = 0, name: str = "gep") -> AmspInstance:
    """Bind GEP data.

    State ``x[n, i]``: units of type ``i`` built at node ``n`` (integer, at
    most ``build_limit``).  Stage vector: generation ``g[i, k]`` in MW for
    each type and subperiod, then unserved load ``u[k]``.  Rows per node and
    subperiod: ``sum_{m in P(n)} cap_i cf x[m, i] - g[i, k] >= -cap_i cf x0_i``
    and ``sum_i g[i, k] + u[k] >= demand[k]``.
    """
    tree, p = data.tree, data.params
    N, G = tree.num_nodes, len(GENERATOR_TYPES)
    K = data.hours.size
    T = tree.num_stages
    cap = np.asarray(p.nominal_mw)
    stage = tree.stage_array()
    disc = (1.0 + p.interest) ** -(stage - 1.0)
    # fixed O&M paid from the build year to the horizon, discounted to the build year
    remaining = np.array([sum((1.0 + p.interest) ** -(t - tn) for t in range(tn, T + 1)) for tn in stage])
    a = disc[:, None] * (data.capital + remaining[:, None] * data.fixed_om) * cap[None, :]
    gen_cost = disc[:, None, None] * data.variable[:, :, None] * data.hours[None, None, :]
    unserved = disc[:, None] * p.penalty_per_mwh * data.hours[None, :]
    b = np.concatenate([gen_cost.reshape(N, G * K), unserved], axis=1)
    a, b = a * p.money_scale, b * p.money_scale

    nodes = np.arange(1, N + 1)
    rb = RowBuilder()
    # capacity rows, one per (n, i, k); x-terms over the whole root path
    paths = [tree.path_to_root(int(n)) for n in nodes]
    row_n = np.repeat(nodes, G * K)
    row_i = np.tile(np.repeat(np.arange(G), K), N)
    row_k = np.tile(np.arange(K), N * G)
    coeff = cap[row_i] * data.capacity_factor[row_n - 1, row_i, row_k]
    rhs = -coeff * data.initial_units[row_i]
    depth = np.array([len(pt) for pt in paths])
    reps = depth[row_n - 1]
    local = np.repeat(np.arange(row_n.size), reps)
    xn = np.concatenate([paths[n - 1] for n in row_n])
    rb.add_block(row_n, ">=", rhs,
                 x_terms=(local, xn, row_i[local], coeff[local]),
                 y_terms=(np.arange(row_n.size), row_n, row_i * K + row_k, -np.ones(row_n.size)))
    # demand rows, one per (n, k)
    dn = np.repeat(nodes, K)
    dk = np.tile(np.arange(K), N)
    loc = np.arange(dn.size)
    y_local = np.concatenate([np.repeat(loc, G), loc])
    y_node = np.concatenate([np.repeat(dn, G), dn])
    y_var = np.concatenate([(np.tile(np.arange(G), dn.size) * K + np.repeat(dk, G)), G * K + dk])
    rb.add_block(dn, ">=", data.demand[dn - 1, dk],
                 y_terms=(y_local, y_node, y_var, np.ones(y_local.size)))
    limit = float(p.build_limit)
    return AmspInstance(
        tree=tree, a=a, b=b, rows=rb.build(),
        x_lb=0.0, x_ub=limit, x_integer=True,
        y_lb=0.0, y_ub=np.inf, y_integer=False,
        xbar=np.full(G, limit), mu=mu,
        state_names=GENERATOR_TYPES,
        stage_names=tuple(f"gen_{g}_{k + 1}" for g in GENERATOR_TYPES for k in range(K))
        + tuple(f"unserved_{k + 1}" for k in range(K)),
        name=name, meta={"problem": "gep", "data": data},
    )


def gen_gep(tree: ScenarioTree, seed: int, overrides: Mapping[str, Any] | None = None,
            mu: int = 0) -> AmspInstance:
    data = sample_gep(tree, seed, overrides)
    return gep_instance(data, mu, name=f"gep-T{tree.num_stages}-B{tree.branching}-s{seed}")


PROBLEMS = ("lotsizing", "gep")


def generate(problem: str, tree: ScenarioTree, seed: int, num_states: int = 1, mu: int = 0,
             overrides: Mapping[str, Any] | None = None) -> AmspInstance:
    if problem == "lotsizing":
        return gen_lotsizing(tree, num_states, seed, mu)
    if problem == "gep":
        return gen_gep(tree, seed, overrides, mu)
    raise ValueError(f"unknown problem {problem!r}; choose from {PROBLEMS}")
