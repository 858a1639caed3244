"""Balanced scenario trees with breadth-first node numbering.

Nodes are numbered 1..N breadth-first, so for a B-ary tree the children of
node ``n`` are ``B*(n-1)+2 .. B*n+1`` and the parent of ``n`` is
``(n-2)//B + 1``.  Every stage list is therefore a contiguous index range,
and the descendants of a node at any deeper stage form a contiguous slice of
that stage's range.
"""
from __future__ import annotations

from fractions import Fraction
from typing import Sequence

import numpy as np


class TreeError(ValueError):
    """Invalid tree parameter or node/stage query."""


class ScenarioTree:
    """Immutable balanced tree with ``num_stages`` stages and ``branching`` branches.

    Parameters
    ----------
    num_stages : int
        Number of stages ``T`` (>= 1).
    branching : int
        Branches per non-leaf node ``B`` (>= 1).
    probabilities : sequence of float, optional
        Node probabilities indexed by node (``probabilities[n-1]``).  Defaults
        to uniform per stage, ``B**-(t-1)``.
    """

    __slots__ = ("_T", "_B", "_first", "_prob")

    def __init__(self, num_stages: int, branching: int,
                 probabilities: Sequence[float] | None = None):
        if int(num_stages) != num_stages or num_stages < 1:
            raise TreeError(f"num_stages must be a positive integer, got {num_stages!r}")
        if int(branching) != branching or branching < 1:
            raise TreeError(f"branching must be a positive integer, got {branching!r}")
        self._T = int(num_stages)
        self._B = int(branching)
        # first node index of each stage, with a sentinel for stage T+1
        first = [1]
        for t in range(1, self._T + 1):
            first.append(first[-1] + self._B ** (t - 1))
        self._first = tuple(first)
        if probabilities is None:
            prob = np.array([float(Fraction(1, self._B ** (self.stage(n) - 1)))
                             for n in range(1, self.num_nodes + 1)])
        else:
            prob = np.asarray(probabilities, dtype=float)
            if prob.shape != (self.num_nodes,):
                raise TreeError(f"expected {self.num_nodes} probabilities, got {prob.shape}")
            if np.any(prob <= 0) or np.any(prob > 1):
                raise TreeError("node probabilities must lie in (0, 1]")
            for t in self.stages:
                lo, hi = self._first[t - 1], self._first[t]
                if not np.isclose(prob[lo - 1:hi - 1].sum(), 1.0, atol=1e-9):
                    raise TreeError(f"probabilities of stage {t} do not sum to 1")
        prob.setflags(write=False)
        self._prob = prob

    def __repr__(self) -> str:
        return f"ScenarioTree(T={self._T}, B={self._B})"

    def __eq__(self, other) -> bool:
        return (isinstance(other, ScenarioTree) and self._T == other._T
                and self._B == other._B and np.array_equal(self._prob, other._prob))

    def __hash__(self) -> int:
        return hash((self._T, self._B))

    @property
    def num_stages(self) -> int:
        return self._T

    @property
    def branching(self) -> int:
        return self._B

    @property
    def num_nodes(self) -> int:
        return self._first[-1] - 1

    @property
    def stages(self) -> range:
        return range(1, self._T + 1)

    @property
    def nodes(self) -> range:
        return range(1, self.num_nodes + 1)

    @property
    def probabilities(self) -> np.ndarray:
        """Read-only array of node probabilities, entry ``n-1`` for node ``n``."""
        return self._prob

    @property
    def is_uniform(self) -> bool:
        expected = np.array([self._B ** -(self.stage(n) - 1) for n in self.nodes], dtype=float)
        return bool(np.allclose(self._prob, expected, rtol=0, atol=1e-12))

    def _check_node(self, n: int) -> None:
        if not (1 <= n <= self.num_nodes):
            raise TreeError(f"node {n} is not in a tree with {self.num_nodes} nodes")

    def _check_stage(self, t: int) -> None:
        if not (1 <= t <= self._T):
            raise TreeError(f"stage {t} outside 1..{self._T}")

    def probability(self, n: int) -> float:
        self._check_node(n)
        return float(self._prob[n - 1])

    def stage(self, n: int) -> int:
        """Stage ``t_n`` of node ``n``."""
        self._check_node(n)
        # _first is short (T+1 entries); a linear scan is fine
        for t in range(1, self._T + 1):
            if n < self._first[t]:
                return t
        raise AssertionError("unreachable")

    def stage_range(self, t: int) -> range:
        """Nodes of stage ``t`` (``S_t``) in global order."""
        self._check_stage(t)
        return range(self._first[t - 1], self._first[t])

    def stage_nodes(self, t: int) -> list[int]:
        return list(self.stage_range(t))

    def stage_size(self, t: int) -> int:
        self._check_stage(t)
        return self._B ** (t - 1)

    def parent(self, n: int) -> int | None:
        """Ancestor ``a(n)``; ``None`` for the root."""
        self._check_node(n)
        if n == 1:
            return None
        return (n - 2) // self._B + 1

    def children(self, n: int) -> list[int]:
        self._check_node(n)
        if self.stage(n) == self._T:
            return []
        first = self._B * (n - 1) + 2
        return list(range(first, first + self._B))

    def path_to_root(self, n: int) -> list[int]:
        """``P(n)`` ordered from the root down to ``n``."""
        self._check_node(n)
        path = [n]
        while path[-1] != 1:
            path.append((path[-1] - 2) // self._B + 1)
        path.reverse()
        return path

    def ancestor_at(self, n: int, t: int) -> int:
        """The node of ``P(n)`` at stage ``t``."""
        tn = self.stage(n)
        if not (1 <= t <= tn):
            raise TreeError(f"stage {t} is not on the path of node {n} (stage {tn})")
        for _ in range(tn - t):
            n = (n - 2) // self._B + 1
        return n

    def subtree_slice(self, l: int, t: int) -> range:
        """``S_t ∩ 𝒯(l)`` as a contiguous node range."""
        tl = self.stage(l)
        if t < tl or t > self._T:
            raise TreeError(f"stage {t} outside {tl}..{self._T} for subtree of node {l}")
        width = self._B ** (t - tl)
        pos = l - self._first[tl - 1]
        start = self._first[t - 1] + pos * width
        return range(start, start + width)

    def subtree_stage_nodes(self, l: int, t: int) -> list[int]:
        return list(self.subtree_slice(l, t))

    def lca_stage(self, m: int, n: int) -> int:
        """Stage of the last common ancestor of two distinct same-stage nodes."""
        if m == n:
            raise TreeError("lca_stage needs two distinct nodes")
        tm, tn = self.stage(m), self.stage(n)
        if tm != tn:
            raise TreeError(f"nodes {m} and {n} lie in different stages ({tm} vs {tn})")
        t = tm
        while m != n:
            m = (m - 2) // self._B + 1
            n = (n - 2) // self._B + 1
            t -= 1
        return t

    def truncated(self, num_stages: int) -> "ScenarioTree":
        """The subtree ``𝒯(root, num_stages)``; node numbers are preserved."""
        if not (1 <= num_stages <= self._T):
            raise TreeError(f"cannot truncate a {self._T}-stage tree to {num_stages} stages")
        keep = self._first[num_stages] - 1
        return ScenarioTree(num_stages, self._B, self._prob[:keep])

    def stage_array(self) -> np.ndarray:
        """Stage of every node as an int array (entry ``n-1``)."""
        out = np.empty(self.num_nodes, dtype=int)
        for t in self.stages:
            r = self.stage_range(t)
            out[r.start - 1:r.stop - 1] = t
        return out

    def parent_array(self) -> np.ndarray:
        """Parent index of every node, 0 for the root."""
        n = np.arange(1, self.num_nodes + 1)
        par = (n - 2) // self._B + 1
        par[0] = 0
        return par


def build_uniform_tree(T: int, B: int) -> ScenarioTree:
    """Balanced tree with equiprobable nodes within each stage."""
    return ScenarioTree(T, B)
