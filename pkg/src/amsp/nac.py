"""Non-anticipativity constraints (NACs) for adaptive multistage programs.

Every NAC is a single inequality on one state component ``i``::

    x[i, left] >= x[i, right] - xbar[i] * (r[i, stage] - r[i, ancestor_stage])

Four regimes are supported:

``full``
    every ordered pair of distinct nodes in ``S_t' ∩ 𝒯(l)``, ``l ∈ S_t``, for
    all ``t < t'`` (both orientations of each unordered pair).
``prop5``
    a cyclic chain over the same node blocks instead of all pairs.
``prop5+6``
    only pairs whose last common ancestor sits at ``t``: for each ``l`` the
    last node of child block ``j`` is linked to the first node of child block
    ``j+1`` (cyclically), giving ``B`` rows per ``l``.
``prop5+6+7``
    ``prop5+6`` restricted to ancestor stages inside the revision window
    ``t' - t <= T - mu - 1``.  This is the reduced formulation; ``reduced``
    is accepted as an alias.
"""
from __future__ import annotations

from math import comb
from typing import Iterator, NamedTuple

import numpy as np

from .scenario_tree import ScenarioTree

REGIMES = ("full", "prop5", "prop5+6", "prop5+6+7")
_ALIASES = {"reduced": "prop5+6+7", "combined": "prop5+6+7"}


class NacConstraint(NamedTuple):
    state: int           # 0-based state component
    left: int            # node m
    right: int           # node n
    stage: int           # t' (stage of m and n)
    ancestor_stage: int  # t_a < t'


def normalize_regime(regime: str) -> str:
    key = _ALIASES.get(regime, regime)
    if key not in REGIMES:
        raise ValueError(f"unknown NAC regime {regime!r}; choose from {REGIMES + tuple(_ALIASES)}")
    return key


def _check_mu(tree: ScenarioTree, mu: int) -> None:
    if int(mu) != mu or not (0 <= mu <= tree.num_stages - 1):
        raise ValueError(f"revision budget mu={mu!r} outside 0..{tree.num_stages - 1}")


def window(T: int, mu: int, stage: int) -> range:
    """Admissible ancestor stages for constraint stage ``stage`` under budget ``mu``."""
    return range(max(1, stage - (T - mu) + 1), stage)


def _cell_admissible(T: int, mu: int, regime: str, anc: int, stage: int) -> bool:
    if regime == "prop5+6+7":
        return stage - anc <= T - mu - 1
    return True


class NacSet:
    """Column-stored collection of NAC rows.

    Attributes are parallel int arrays; iterating yields :class:`NacConstraint`.
    """

    __slots__ = ("tree", "regime", "mu", "state", "left", "right", "stage", "ancestor_stage")

    def __init__(self, tree, regime, mu, state, left, right, stage, ancestor_stage):
        self.tree = tree
        self.regime = regime
        self.mu = mu
        self.state = state
        self.left = left
        self.right = right
        self.stage = stage
        self.ancestor_stage = ancestor_stage

    def __len__(self) -> int:
        return int(self.state.shape[0])

    def __iter__(self) -> Iterator[NacConstraint]:
        for row in zip(self.state.tolist(), self.left.tolist(), self.right.tolist(),
                       self.stage.tolist(), self.ancestor_stage.tolist()):
            yield NacConstraint(*row)

    def __getitem__(self, k: int) -> NacConstraint:
        return NacConstraint(int(self.state[k]), int(self.left[k]), int(self.right[k]),
                             int(self.stage[k]), int(self.ancestor_stage[k]))

    def __repr__(self) -> str:
        return f"NacSet(regime={self.regime!r}, mu={self.mu}, size={len(self)})"

    def cell_counts(self, num_states: int | None = None) -> np.ndarray:
        """Counts per ``(ancestor_stage, stage)`` for one state component.

        Entry ``[t_a - 1, t' - 1]``.  With ``num_states=None`` all rows count.
        """
        T = self.tree.num_stages
        mask = slice(None) if num_states is None else (self.state == 0)
        out = np.zeros((T, T), dtype=np.int64)
        np.add.at(out, (self.ancestor_stage[mask] - 1, self.stage[mask] - 1), 1)
        return out


def _stage_blocks(tree: ScenarioTree, anc: int, stage: int) -> np.ndarray:
    """Nodes of ``S_stage`` reshaped so row ``k`` is the subtree slice of the k-th node of ``S_anc``."""
    nodes = np.arange(tree.stage_range(stage).start, tree.stage_range(stage).stop)
    return nodes.reshape(tree.stage_size(anc), -1)


def _pairs_for_cell(tree: ScenarioTree, regime: str, anc: int, stage: int):
    B = tree.branching
    if B == 1:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    blocks = _stage_blocks(tree, anc, stage)
    K = blocks.shape[1]
    if regime == "full":
        a, b = np.nonzero(~np.eye(K, dtype=bool))
        return blocks[:, a].ravel(), blocks[:, b].ravel()
    if regime == "prop5":
        k = np.arange(K)
        return blocks[:, k].ravel(), blocks[:, (k + 1) % K].ravel()
    # boundary links between consecutive child blocks, closed cyclically
    child = blocks.reshape(blocks.shape[0], B, K // B)
    j = np.arange(B)
    left = child[:, j, -1]
    right = child[:, (j + 1) % B, 0]
    return left.ravel(), right.ravel()


def generate_nacs(tree: ScenarioTree, regime: str, mu: int, num_states: int) -> NacSet:
    """Enumerate every NAC of ``regime`` for ``num_states`` state components."""
    regime = normalize_regime(regime)
    _check_mu(tree, mu)
    if num_states < 0:
        raise ValueError("num_states must be non-negative")
    T = tree.num_stages
    lefts, rights, stages, ancs = [], [], [], []
    for stage in range(2, T + 1):
        for anc in range(1, stage):
            if not _cell_admissible(T, mu, regime, anc, stage):
                continue
            left, right = _pairs_for_cell(tree, regime, anc, stage)
            lefts.append(left)
            rights.append(right)
            stages.append(np.full(left.shape, stage, dtype=np.int64))
            ancs.append(np.full(left.shape, anc, dtype=np.int64))
    if lefts:
        left = np.concatenate(lefts)
        right = np.concatenate(rights)
        stage = np.concatenate(stages)
        anc = np.concatenate(ancs)
    else:
        left = right = stage = anc = np.empty(0, dtype=np.int64)
    per_state = left.shape[0]
    return NacSet(
        tree, regime, mu,
        np.repeat(np.arange(num_states, dtype=np.int64), per_state),
        np.tile(left, num_states), np.tile(right, num_states),
        np.tile(stage, num_states), np.tile(anc, num_states),
    )


def generate_full_nacs(tree: ScenarioTree, mu: int, num_states: int) -> NacSet:
    return generate_nacs(tree, "full", mu, num_states)


def generate_reduced_nacs(tree: ScenarioTree, mu: int, num_states: int) -> NacSet:
    return generate_nacs(tree, "prop5+6+7", mu, num_states)


def count_cells(tree: ScenarioTree, regime: str, mu: int = 0) -> np.ndarray:
    """Closed-form NAC counts per ``(t_a, t')`` cell for a single state component.

    Returns a ``T x T`` int64 array indexed ``[t_a - 1, t' - 1]``; cells with
    ``t_a >= t'`` are zero.
    """
    regime = normalize_regime(regime)
    _check_mu(tree, mu)
    T, B = tree.num_stages, tree.branching
    out = np.zeros((T, T), dtype=np.int64)
    if B == 1:
        return out
    for stage in range(2, T + 1):
        for anc in range(1, stage):
            if regime == "full":
                out[anc - 1, stage - 1] = B ** (anc - 1) * 2 * comb(B ** (stage - anc), 2)
            elif regime == "prop5":
                out[anc - 1, stage - 1] = B ** (stage - 1)
            elif regime == "prop5+6" or _cell_admissible(T, mu, regime, anc, stage):
                out[anc - 1, stage - 1] = B ** anc
    return out


def total_count(tree: ScenarioTree, regime: str, mu: int = 0, num_states: int = 1) -> int:
    return int(count_cells(tree, regime, mu).sum()) * num_states
