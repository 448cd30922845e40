"""Architectures, rings, per-step activity schedules and communication accounting.

Time runs over steps ``s = 0 .. T-1``. Every active node first takes one
local step; synchronisation conditions are then tested on ``t = s + 1``, so
with interval ``tau`` the first sync happens at the end of step ``tau - 1``.
A ring level with interval ``I`` sits at segment ``s // I``, and chain ``c``
occupies ring position ``(segment + c) mod period``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator, Sequence

from ._rng import substream
from .errors import InvalidArgument
from .grouping import GroupAssignment

GLOBAL_LEVELS = ("star", "ring", "none")
GROUP_LEVELS = ("star", "ring", "flat")
SCHEMES = ("iid", "cluster", "random", "single")

_NAMES = {
    ("star", "flat"): "STAR",
    ("ring", "flat"): "RING",
    ("star", "star"): "STAR-stars",
    ("star", "ring"): "STAR-rings",
    ("ring", "star"): "RING-stars",
    ("ring", "ring"): "RING-rings",
    ("none", "star"): "stars",
    ("none", "ring"): "rings",
}
ARCHITECTURES = tuple(_NAMES.values())
_LEVELS = {name.lower(): levels for levels, name in _NAMES.items()}


@dataclass(frozen=True)
class ArchitectureConfig:
    """One row of the architecture matrix plus its intervals.

    Flat architectures sync every ``tau``; consensus ones every ``tau1`` at
    group level and every ``tau1 * tau2`` globally; pluralistic ones every
    ``tau`` at group level. ``clamp_chains`` lowers the chain count to each
    ring's period instead of rejecting it.
    """

    global_level: str = "star"
    group_level: str = "flat"
    grouping_scheme: str = "single"
    num_groups: int = 1
    chains: int = 1
    tau1: int = 10
    tau2: int = 10
    tau: int = 100
    clamp_chains: bool = False

    def __post_init__(self) -> None:
        if self.global_level not in GLOBAL_LEVELS:
            raise InvalidArgument(f"global_level must be one of {GLOBAL_LEVELS}")
        if self.group_level not in GROUP_LEVELS:
            raise InvalidArgument(f"group_level must be one of {GROUP_LEVELS}")
        if self.grouping_scheme not in SCHEMES:
            raise InvalidArgument(f"grouping_scheme must be one of {SCHEMES}")
        if self.global_level == "none" and self.group_level == "flat":
            raise InvalidArgument("a pluralistic architecture needs a star or ring group level")
        if self.group_level == "flat":
            if self.num_groups != 1:
                raise InvalidArgument("flat architectures have exactly one group")
            object.__setattr__(self, "grouping_scheme", "single")
        if self.num_groups < 1:
            raise InvalidArgument("num_groups must be >= 1")
        if self.grouping_scheme == "single" and self.num_groups != 1:
            raise InvalidArgument("grouping_scheme 'single' requires num_groups=1")
        if self.chains < 1:
            raise InvalidArgument("chains must be >= 1")
        for key in ("tau1", "tau2", "tau"):
            if getattr(self, key) < 1:
                raise InvalidArgument(f"{key} must be >= 1")

    @classmethod
    def from_name(cls, name: str, **kwargs) -> "ArchitectureConfig":
        try:
            glob, grp = _LEVELS[name.lower()]
        except KeyError:
            raise InvalidArgument(f"unknown architecture {name!r}; expected one of {ARCHITECTURES}") from None
        return cls(global_level=glob, group_level=grp, **kwargs)

    @property
    def name(self) -> str:
        return _NAMES[(self.global_level, self.group_level)]

    @property
    def hierarchy(self) -> str:
        if self.group_level == "flat":
            return "flat"
        return "pluralistic" if self.global_level == "none" else "consensus"

    @property
    def round_interval(self) -> int:
        return self.tau1 if self.hierarchy == "consensus" else self.tau

    @property
    def global_interval(self) -> int | None:
        if self.hierarchy == "consensus":
            return self.tau1 * self.tau2
        return self.tau if self.hierarchy == "flat" else None

    @property
    def sync_interval(self) -> int:
        """Interval whose multiples ``T`` must be for whole-interval accounting."""
        return self.tau1 * self.tau2 if self.hierarchy == "consensus" else self.tau

    def to_dict(self) -> dict:
        return {"architecture": self.name, "global_level": self.global_level, "group_level": self.group_level,
                "grouping_scheme": self.grouping_scheme, "num_groups": self.num_groups, "chains": self.chains,
                "tau1": self.tau1, "tau2": self.tau2, "tau": self.tau, "clamp_chains": self.clamp_chains}


@dataclass(frozen=True)
class Ring:
    order: tuple[int, ...]

    @property
    def period(self) -> int:
        return len(self.order)

    def __getitem__(self, position: int) -> int:
        return self.order[position % len(self.order)]


def build_ring(num_items: int, seed: int) -> Ring:
    """Seeded uniform random cyclic order over ``0 .. num_items-1``."""
    if num_items < 1:
        raise InvalidArgument("a ring needs at least one item")
    perm = substream(seed, "ring").permutation(num_items)
    return Ring(tuple(int(i) for i in perm))


@dataclass(frozen=True)
class Rings:
    """``top`` runs over nodes (RING) or groups (RING-*); ``per_group[k]`` runs over group k's node ids."""
    top: Ring | None = None
    per_group: tuple[Ring, ...] | None = None


def build_rings(cfg: ArchitectureConfig, grouping: GroupAssignment, seed: int) -> Rings:
    rng = substream(seed, "rings")
    top = per_group = None
    if cfg.name == "RING":
        top = build_ring(grouping.num_nodes, int(rng.integers(2**31 - 1)))
    elif cfg.global_level == "ring":
        top = build_ring(grouping.num_groups, int(rng.integers(2**31 - 1)))
    if cfg.group_level == "ring":
        rings = []
        for members in grouping.groups():
            perm = build_ring(len(members), int(rng.integers(2**31 - 1)))
            rings.append(Ring(tuple(members[p] for p in perm.order)))
        per_group = tuple(rings)
    return Rings(top, per_group)


def _resolve(chains: int, period: int, clamp: bool, what: str) -> int:
    if chains > period:
        if not clamp:
            raise InvalidArgument(f"{chains} chains exceed the period {period} of {what}")
        return period
    return chains


def effective_chains(cfg: ArchitectureConfig, grouping: GroupAssignment) -> tuple[int, tuple[int, ...]]:
    """Chains on the top ring and on each group ring (0 where a level has no ring)."""
    sizes = [int(s) for s in grouping.sizes()]
    top = 0
    if cfg.name == "RING":
        top = _resolve(cfg.chains, grouping.num_nodes, cfg.clamp_chains, "the node ring")
    elif cfg.global_level == "ring":
        top = _resolve(cfg.chains, grouping.num_groups, cfg.clamp_chains, "the group ring")
    per_group = tuple(0 for _ in sizes)
    if cfg.group_level == "ring" and cfg.global_level != "ring":
        per_group = tuple(_resolve(cfg.chains, n, cfg.clamp_chains, f"group ring {k}") for k, n in enumerate(sizes))
    return top, per_group


@dataclass(frozen=True)
class Sync:
    """One synchronisation event.

    ``aggregate``: each tuple in ``sources`` is averaged by node data size,
    the tuple averages are combined by tuple data size, and the result is
    written to every node in ``targets``. ``transfer``: the single source
    node's model is copied to ``targets``. ``messages`` counts model-sized
    transmissions.
    """
    kind: str
    sources: tuple[tuple[int, ...], ...]
    targets: tuple[int, ...]
    messages: int

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sources": [list(s) for s in self.sources],
                "targets": list(self.targets), "messages": self.messages}


@dataclass(frozen=True)
class StepPlan:
    step: int
    active: tuple[tuple[int, int], ...]
    group_syncs: tuple[Sync, ...]
    global_syncs: tuple[Sync, ...]
    bytes: int

    @property
    def syncs(self) -> tuple[Sync, ...]:
        return self.group_syncs + self.global_syncs

    def to_json(self) -> str:
        return json.dumps({"step": self.step, "active": [list(a) for a in self.active],
                           "group_syncs": [s.to_dict() for s in self.group_syncs],
                           "global_syncs": [s.to_dict() for s in self.global_syncs],
                           "bytes": self.bytes}, sort_keys=True)


def _check_rings(cfg: ArchitectureConfig, grouping: GroupAssignment, rings: Rings) -> None:
    if cfg.group_level == "flat" and grouping.num_groups != 1:
        raise InvalidArgument("flat architectures need a single-group assignment")
    if grouping.num_groups != cfg.num_groups:
        raise InvalidArgument(f"grouping has {grouping.num_groups} groups, config expects {cfg.num_groups}")
    if cfg.name == "RING":
        if rings.top is None or sorted(rings.top.order) != list(range(grouping.num_nodes)):
            raise InvalidArgument("RING needs a ring over all nodes")
    elif cfg.global_level == "ring":
        if rings.top is None or sorted(rings.top.order) != list(range(grouping.num_groups)):
            raise InvalidArgument("a global ring must cover every group")
    if cfg.group_level == "ring":
        if rings.per_group is None or len(rings.per_group) != grouping.num_groups:
            raise InvalidArgument("group rings missing")
        for k, ring in enumerate(rings.per_group):
            if sorted(ring.order) != list(grouping.members(k)):
                raise InvalidArgument(f"ring of group {k} does not match its members")


def iter_schedule(cfg: ArchitectureConfig, grouping: GroupAssignment, rings: Rings, T: int,
                  model_bytes: int = 1) -> Iterator[StepPlan]:
    """Yield the :class:`StepPlan` of every step in ``0 .. T-1``."""
    if T < 0:
        raise InvalidArgument("T must be >= 0")
    _check_rings(cfg, grouping, rings)
    top_chains, group_chains = effective_chains(cfg, grouping)
    groups = grouping.groups()
    sizes = [len(g) for g in groups]
    n = grouping.num_nodes
    everyone = tuple(range(n))
    node_group = [int(g) for g in grouping.membership]
    all_active = tuple((node_group[i], i) for i in everyone)
    arch = cfg.name
    t1, t12, tau = cfg.tau1, cfg.tau1 * cfg.tau2, cfg.tau

    for s in range(T):
        t = s + 1
        active: list[tuple[int, int]] = []
        grp: list[Sync] = []
        glb: list[Sync] = []

        if arch == "STAR":
            active = list(all_active)
            if t % tau == 0:
                glb.append(Sync("aggregate", (everyone,), everyone, n))

        elif arch == "RING":
            ring, j = rings.top, s // tau
            for c in range(top_chains):
                active.append((0, ring[j + c]))
                if t % tau == 0:
                    glb.append(Sync("transfer", ((ring[j + c],),), (ring[j + 1 + c],), 1))

        elif arch in ("STAR-stars", "stars"):
            active = list(all_active)
            if arch == "STAR-stars" and t % t12 == 0:
                glb.append(Sync("aggregate", tuple(groups), everyone, n))
            elif t % (t1 if arch == "STAR-stars" else tau) == 0:
                grp.extend(Sync("aggregate", (g,), g, len(g)) for g in groups)

        elif arch in ("STAR-rings", "rings"):
            interval = t1 if arch == "STAR-rings" else tau
            j = s // interval
            is_global = arch == "STAR-rings" and t % t12 == 0
            for k, ring in enumerate(rings.per_group):
                for c in range(group_chains[k]):
                    active.append((k, ring[j + c]))
                    if not is_global and t % interval == 0:
                        grp.append(Sync("transfer", ((ring[j + c],),), (ring[j + 1 + c],), 1))
            if is_global:
                glb.append(Sync("aggregate", (everyone,), everyone, n))

        elif arch == "RING-stars":
            gring, l = rings.top, s // t12
            for c in range(top_chains):
                k = gring[l + c]
                active.extend((k, i) for i in groups[k])
                if t % t12 == 0:
                    glb.append(Sync("aggregate", (groups[k],), groups[gring[l + 1 + c]], sizes[k]))
                elif t % t1 == 0:
                    grp.append(Sync("aggregate", (groups[k],), groups[k], sizes[k]))

        elif arch == "RING-rings":
            gring, l, j = rings.top, s // t12, s // t1
            for c in range(top_chains):
                k = gring[l + c]
                ring = rings.per_group[k]
                node = ring[j]
                active.append((k, node))
                if t % t12 == 0:
                    glb.append(Sync("transfer", ((node,),), groups[gring[l + 1 + c]], 1))
                elif t % t1 == 0:
                    grp.append(Sync("transfer", ((node,),), (ring[j + 1],), 1))

        else:  # pragma: no cover - config validation makes this unreachable
            raise InvalidArgument(f"unsupported architecture {arch}")

        active.sort()
        messages = sum(e.messages for e in grp) + sum(e.messages for e in glb)
        yield StepPlan(s, tuple(active), tuple(grp), tuple(glb), messages * model_bytes)


def schedule(cfg: ArchitectureConfig, grouping: GroupAssignment, rings: Rings, T: int,
             model_bytes: int = 1) -> list[StepPlan]:
    return list(iter_schedule(cfg, grouping, rings, T, model_bytes))


@dataclass(frozen=True)
class CommReport:
    total_bytes: int
    bytes_per_round: float
    peak_concurrent_links: int

    def to_dict(self) -> dict:
        return {"total_bytes": self.total_bytes, "bytes_per_round": self.bytes_per_round,
                "peak_concurrent_links": self.peak_concurrent_links}


def _round_links(plan: StepPlan, flat: bool) -> int:
    events = plan.global_syncs if flat else plan.group_syncs
    return sum(e.messages for e in events)


def schedule_comm(cfg: ArchitectureConfig, plans: Sequence[StepPlan]) -> CommReport:
    """Communication totals measured on an explicit schedule.

    Peak links are taken over round-level events (the global events of a
    flat architecture, group events otherwise), falling back to global
    events when no round-level event exists (``tau2 = 1``).
    """
    total = sum(p.bytes for p in plans)
    flat = cfg.hierarchy == "flat"
    peak = max((_round_links(p, flat) for p in plans), default=0)
    if peak == 0:
        peak = max((sum(e.messages for e in p.global_syncs) for p in plans), default=0)
    rounds = len(plans) // cfg.round_interval
    return CommReport(total, total / rounds if rounds else 0.0, peak)


def comm_cost(cfg: ArchitectureConfig, model_bytes: int, T: int, node_count: int,
              group_sizes: Sequence[int] | None = None, group_ring: Ring | None = None) -> CommReport:
    """Closed-form communication totals for ``T`` steps of ``cfg``.

    ``group_sizes`` defaults to equal groups (``node_count`` must then divide
    evenly); ``group_ring`` is needed for RING-stars with unequal groups,
    where the per-interval cost depends on which groups the chains visit.
    """
    M = int(model_bytes)
    N = int(node_count)
    G = cfg.num_groups
    if T % cfg.sync_interval:
        raise InvalidArgument(f"T={T} is not a whole number of {cfg.sync_interval}-step intervals")
    if group_sizes is None:
        if N % G:
            raise InvalidArgument("unequal groups: pass group_sizes")
        group_sizes = [N // G] * G
    sizes = [int(x) for x in group_sizes]
    if len(sizes) != G or sum(sizes) != N or min(sizes) < 1:
        raise InvalidArgument("group_sizes must list one positive size per group summing to node_count")
    C = cfg.chains
    arch = cfg.name

    def clamp(period: int) -> int:
        return _resolve(C, period, cfg.clamp_chains, "ring")

    tau_f = T // cfg.tau  # flat and pluralistic sync count
    tau_c = T // (cfg.tau1 * cfg.tau2) if cfg.hierarchy == "consensus" else 0
    tau2 = cfg.tau2
    round_level = tau2 > 1

    if arch == "STAR":
        total, peak = M * N * tau_f, N
    elif arch == "RING":
        c = clamp(N)
        total, peak = M * c * tau_f, c
    elif arch == "STAR-stars":
        total, peak = M * N * tau2 * tau_c, N
    elif arch == "stars":
        total, peak = M * N * tau_f, N
    elif arch == "STAR-rings":
        chains = sum(clamp(s) for s in sizes)
        total = M * chains * (tau2 - 1) * tau_c + M * N * tau_c
        peak = chains if round_level else N
    elif arch == "rings":
        chains = sum(clamp(s) for s in sizes)
        total, peak = M * chains * tau_f, chains
    elif arch == "RING-stars":
        c = clamp(G)
        if group_ring is None:
            if len(set(sizes)) != 1:
                raise InvalidArgument("RING-stars with unequal groups needs group_ring")
            total = M * c * sizes[0] * tau2 * tau_c
            peak = c * sizes[0]
        else:
            visited = [sum(sizes[group_ring[l + i]] for i in range(c)) for l in range(tau_c)]
            total = M * tau2 * sum(visited)
            peak = max((sum(sizes[group_ring[l + i]] for i in range(c)) for l in range(min(tau_c, G))), default=0)
    elif arch == "RING-rings":
        c = clamp(G)
        total, peak = M * c * tau2 * tau_c, c
    else:  # pragma: no cover
        raise InvalidArgument(f"unsupported architecture {arch}")

    rounds = T // cfg.round_interval
    return CommReport(total, total / rounds if rounds else 0.0, peak)
