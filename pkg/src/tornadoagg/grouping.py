"""Node grouping by label-distribution distance (EMD between class histograms).

``group`` is a k-medoids style descent parameterised by two cost callbacks:
an association cost deciding which group a node joins and an update cost
deciding which member becomes a group's medoid. ``group_by_iid`` makes every
group look like the global distribution; ``cluster`` gathers similar nodes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._rng import substream
from .dataset import FederatedDataset
from .errors import InvalidArgument

MAX_ITERS = 100
TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class GroupAssignment:
    membership: np.ndarray
    num_groups: int

    def __post_init__(self) -> None:
        m = np.asarray(self.membership, dtype=np.int64).copy()
        m.setflags(write=False)
        object.__setattr__(self, "membership", m)
        if self.num_groups < 1:
            raise InvalidArgument("num_groups must be >= 1")
        if m.ndim != 1 or m.size == 0:
            raise InvalidArgument("membership must be a non-empty vector")
        if m.min() < 0 or m.max() >= self.num_groups:
            raise InvalidArgument("group id out of range")
        empty = sorted(set(range(self.num_groups)) - set(m.tolist()))
        if empty:
            raise InvalidArgument(f"groups {empty} are empty")

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, GroupAssignment) and self.num_groups == other.num_groups
                and np.array_equal(self.membership, other.membership))

    @property
    def num_nodes(self) -> int:
        return int(self.membership.size)

    def members(self, k: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.membership == k))

    def groups(self) -> list[tuple[int, ...]]:
        return [self.members(k) for k in range(self.num_groups)]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.membership, minlength=self.num_groups)

    def to_dict(self) -> dict:
        return {"num_groups": self.num_groups, "membership": self.membership.tolist()}

    def to_json(self, report: "GroupingCostReport | None" = None) -> str:
        doc = self.to_dict()
        if report is not None:
            doc["cost_report"] = report.to_dict()
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GroupAssignment":
        doc = json.loads(text)
        return cls(np.array(doc["membership"], dtype=np.int64), int(doc["num_groups"]))


@dataclass
class GroupingCostReport:
    initial_cost: float
    final_cost: float
    iterations: int
    cost_trace: list[float]

    @property
    def reduction(self) -> float:
        """Relative cost reduction, 0 when the initial cost is already 0."""
        if self.initial_cost <= 0:
            return 0.0
        return (self.initial_cost - self.final_cost) / self.initial_cost

    @property
    def reduction_vs_final(self) -> float:
        """Cost drop measured against the final cost; ``inf`` when the final cost is 0."""
        drop = self.initial_cost - self.final_cost
        if self.final_cost <= 0:
            return math.inf if drop > 0 else 0.0
        return drop / self.final_cost

    def to_dict(self) -> dict:
        return {"initial_cost": self.initial_cost, "final_cost": self.final_cost,
                "iterations": self.iterations, "cost_trace": list(self.cost_trace)}


@dataclass
class GroupState:
    """What a cost callback may look at: current medoids and the partial membership (-1 = unplaced)."""
    medoids: list[int]
    membership: np.ndarray
    num_groups: int
    _members: list[list[int]] = field(default_factory=list)

    def members(self, k: int) -> list[int]:
        return self._members[k]

    def place(self, node: int, k: int) -> None:
        self.membership[node] = k
        self._members[k].append(node)

    @classmethod
    def empty(cls, num_nodes: int, medoids: list[int]) -> "GroupState":
        g = len(medoids)
        return cls(list(medoids), np.full(num_nodes, -1, dtype=np.int64), g, [[] for _ in range(g)])


CostFn = Callable[[int, int, GroupState], float]


def emd(p: np.ndarray, q: np.ndarray) -> float:
    """L1 distance between two class histograms, in [0, 2]."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise InvalidArgument(f"histogram lengths differ: {p.shape} vs {q.shape}")
    return float(np.abs(p - q).sum())


def _check_groups(fed: FederatedDataset, num_groups: int) -> None:
    if not 1 <= num_groups <= fed.num_nodes:
        raise InvalidArgument(f"num_groups={num_groups} must lie in [1, {fed.num_nodes}]")


def _assign(num_nodes: int, medoids: list[int], cost_a: CostFn, pin_medoids: bool,
            place_cost: CostFn | None = None) -> GroupState:
    choose = cost_a if place_cost is None else place_cost
    state = GroupState.empty(num_nodes, medoids)
    pinned = set(medoids) if pin_medoids else set()
    if pin_medoids:
        for k, m in enumerate(medoids):
            state.place(m, k)
    for i in range(num_nodes):
        if i in pinned:
            continue
        costs = [choose(i, k, state) for k in range(state.num_groups)]
        state.place(i, int(np.argmin(costs)))  # argmin keeps the lowest index on ties
    _repair_empty(state, cost_a)
    return state


def _repair_empty(state: GroupState, cost_a: CostFn) -> None:
    """Refill empty groups from the largest group, moving its most expensive member."""
    while True:
        sizes = [len(state.members(k)) for k in range(state.num_groups)]
        if min(sizes) > 0:
            return
        target = sizes.index(0)
        donor = int(np.argmax(sizes))
        members = state.members(donor)
        costs = [cost_a(i, donor, state) for i in members]
        node = members[int(np.argmax(costs))]
        members.remove(node)
        state.place(node, target)
        if state.medoids[donor] == node:
            state.medoids[donor] = members[0]
        state.medoids[target] = node


def association_cost(state: GroupState, cost_a: CostFn) -> float:
    """Mean association cost of every node against its own group."""
    n = state.membership.size
    return float(sum(cost_a(i, int(state.membership[i]), state) for i in range(n)) / n)


def group(fed: FederatedDataset, num_groups: int, cost_a: CostFn, cost_u: CostFn, seed: int,
          max_iters: int = MAX_ITERS, tol: float = TOLERANCE,
          pin_medoids: bool = False, place_cost: CostFn | None = None) -> tuple[GroupAssignment, GroupingCostReport]:
    """Medoid descent: pick medoids, assign by ``cost_a``, re-pick medoids by ``cost_u``, repeat.

    Nodes are placed in ascending index order, so membership-dependent costs
    see the groups built so far; ``pin_medoids`` seeds every group with its
    medoid before anyone else is placed. Groups left empty are refilled
    with the most expensive member of the largest group. A round is kept
    only if it does not raise the mean association cost, and the loop stops
    once the improvement drops below ``tol`` or the membership stops moving.
    ``place_cost``, when given, replaces ``cost_a`` for choosing a node's
    group; reported costs and the acceptance test still use ``cost_a``.
    """
    _check_groups(fed, num_groups)
    n = fed.num_nodes
    rng = substream(seed, "medoids")
    medoids = [int(i) for i in rng.choice(n, size=num_groups, replace=False)]
    state = _assign(n, medoids, cost_a, pin_medoids, place_cost)
    cost = association_cost(state, cost_a)
    trace = [cost]
    iterations = 0
    while iterations < max_iters:
        iterations += 1
        new_medoids = []
        for k in range(num_groups):
            members = state.members(k)
            ucost = [cost_u(i, k, state) for i in sorted(members)]
            new_medoids.append(sorted(members)[int(np.argmin(ucost))])
        candidate = _assign(n, new_medoids, cost_a, pin_medoids, place_cost)
        new_cost = association_cost(candidate, cost_a)
        if new_cost > cost:
            break
        improved = cost - new_cost
        moved = not np.array_equal(candidate.membership, state.membership)
        state, cost = candidate, new_cost
        trace.append(cost)
        if improved < tol or not moved:
            break
    assignment = GroupAssignment(state.membership.copy(), num_groups)
    return assignment, GroupingCostReport(trace[0], trace[-1], iterations, trace)


def group_by_iid(fed: FederatedDataset, num_groups: int, seed: int) -> tuple[GroupAssignment, GroupingCostReport]:
    """Groups whose pooled label histogram is close to the global one.

    A node's cost in group k is the EMD between k's pooled histogram (with
    the node counted in) and the global histogram. Nodes are placed where
    they raise the data-weighted sum of those EMDs the least; judging the
    EMD alone lets the first balanced group swallow almost every node.
    """
    _check_groups(fed, num_groups)
    counts = fed.label_counts().astype(np.float64)
    dists = counts / counts.sum(axis=1, keepdims=True)
    glob = counts.sum(axis=0) / counts.sum()

    def pooled_without(i: int, k: int, state: GroupState) -> np.ndarray:
        members = [j for j in state.members(k) if j != i]
        return counts[members].sum(axis=0) if members else np.zeros_like(glob)

    def weighted_emd(pooled: np.ndarray) -> float:
        total = pooled.sum()
        return float(total * emd(pooled / total, glob)) if total > 0 else 0.0

    def cost_a(i: int, k: int, state: GroupState) -> float:
        pooled = pooled_without(i, k, state) + counts[i]
        return emd(pooled / pooled.sum(), glob)

    def place_cost(i: int, k: int, state: GroupState) -> float:
        base = pooled_without(i, k, state)
        return weighted_emd(base + counts[i]) - weighted_emd(base)

    def cost_u(i: int, k: int, state: GroupState) -> float:
        return emd(dists[i], glob)

    return group(fed, num_groups, cost_a, cost_u, seed, pin_medoids=True, place_cost=place_cost)


def cluster(fed: FederatedDataset, num_groups: int, seed: int) -> tuple[GroupAssignment, GroupingCostReport]:
    """Groups of nodes with similar label histograms (k-medoids under EMD)."""
    _check_groups(fed, num_groups)
    dist = pairwise_emd(fed.distributions())

    def cost_a(i: int, k: int, state: GroupState) -> float:
        return float(dist[i, state.medoids[k]])

    def cost_u(i: int, k: int, state: GroupState) -> float:
        return float(dist[i, state.members(k)].sum())

    return group(fed, num_groups, cost_a, cost_u, seed)


def pairwise_emd(dists: np.ndarray) -> np.ndarray:
    return np.abs(dists[:, None, :] - dists[None, :, :]).sum(axis=2)


def random_grouping(num_nodes: int, num_groups: int, seed: int) -> GroupAssignment:
    """Seeded balanced partition: a random permutation dealt round-robin."""
    if not 1 <= num_groups <= num_nodes:
        raise InvalidArgument(f"num_groups={num_groups} must lie in [1, {num_nodes}]")
    perm = substream(seed, "random-groups").permutation(num_nodes)
    membership = np.empty(num_nodes, dtype=np.int64)
    membership[perm] = np.arange(num_nodes) % num_groups
    return GroupAssignment(membership, num_groups)


def single_group(num_nodes: int) -> GroupAssignment:
    return GroupAssignment(np.zeros(num_nodes, dtype=np.int64), 1)


def medoid_partition_cost(dist: np.ndarray, parts: list[list[int]]) -> float:
    """Mean distance to the best medoid of each part; the cost ``cluster`` descends on."""
    total = 0.0
    for part in parts:
        sub = dist[np.ix_(part, part)]
        total += float(sub.sum(axis=1).min())
    return total / dist.shape[0]


def brute_force_bipartition(dist: np.ndarray) -> tuple[float, list[list[int]]]:
    """Exhaustive minimum of :func:`medoid_partition_cost` over all 2-way partitions."""
    n = dist.shape[0]
    best = (np.inf, [])
    for mask in range(1, 2 ** (n - 1)):
        a = [i for i in range(n) if mask >> i & 1]
        b = [i for i in range(n) if not mask >> i & 1]
        c = medoid_partition_cost(dist, [a, b])
        if c < best[0]:
            best = (c, [a, b])
    return best

