"""Step-by-step execution of any architecture, plus the centralized reference run."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import model as mdl
from ._rng import derive_seed, substream
from .dataset import Examples, FederatedDataset
from .errors import DivergedError, InvalidArgument
from .grouping import GroupAssignment, GroupingCostReport, cluster, group_by_iid, random_grouping, single_group
from .model import Hyperparams
from .topology import (ArchitectureConfig, Rings, StepPlan, Sync, build_rings, effective_chains,
                       iter_schedule)

log = logging.getLogger(__name__)

STAR_GLOBAL = ("STAR", "STAR-stars", "STAR-rings")


@dataclass
class EvalRecord:
    step: int
    train_loss: float
    train_accuracy: float
    test_loss: float
    test_accuracy: float
    cum_comm_bytes: int
    ring_variance: float

    def as_row(self) -> list:
        return [self.step, self.train_loss, self.train_accuracy, self.test_loss, self.test_accuracy,
                self.cum_comm_bytes, self.ring_variance]


@dataclass
class RunResult:
    architecture: str
    records: list[EvalRecord]
    final_model: np.ndarray
    final_group_models: list[np.ndarray]
    node_models: np.ndarray
    steps: int
    total_bytes: int
    grouping: GroupAssignment | None = None
    grouping_report: GroupingCostReport | None = None
    reached_target: bool | None = None
    snapshots: list[np.ndarray] = field(default_factory=list)

    @property
    def final(self) -> EvalRecord:
        return self.records[-1]

    def summary(self) -> dict:
        last, first = self.records[-1], self.records[0]
        return {"architecture": self.architecture, "steps": self.steps, "total_bytes": self.total_bytes,
                "initial_train_loss": first.train_loss, "final_train_loss": last.train_loss,
                "final_train_accuracy": last.train_accuracy, "final_test_loss": last.test_loss,
                "final_test_accuracy": last.test_accuracy, "reached_target": self.reached_target}


def make_grouping(cfg: ArchitectureConfig, fed: FederatedDataset, seed: int
                  ) -> tuple[GroupAssignment, GroupingCostReport | None]:
    """Group nodes with the config's scheme, seeded from the ``grouping`` sub-stream."""
    if cfg.num_groups > fed.num_nodes:
        raise InvalidArgument(f"{cfg.num_groups} groups for {fed.num_nodes} nodes")
    gseed = derive_seed(seed, "grouping")
    scheme = cfg.grouping_scheme
    if scheme == "single":
        return single_group(fed.num_nodes), None
    if scheme == "random":
        return random_grouping(fed.num_nodes, cfg.num_groups, gseed), None
    if scheme == "iid":
        return group_by_iid(fed, cfg.num_groups, gseed)
    return cluster(fed, cfg.num_groups, gseed)


def evaluate(models: np.ndarray | Sequence[tuple[np.ndarray, Examples]],
             test: Examples | None = None) -> tuple[float, float]:
    """Loss and accuracy of one model on ``test``, or the example-weighted
    mean over ``(model, shard)`` pairs when a list is given."""
    if isinstance(models, np.ndarray):
        if test is None or len(test) == 0:
            raise InvalidArgument("empty test set")
        pairs = [(models, test)]
    else:
        pairs = [(m, s) for m, s in models if len(s)]
        if not pairs:
            raise InvalidArgument("empty test set")
    n = sum(len(s) for _, s in pairs)
    loss_total = sum(mdl.loss_sum(m, s) for m, s in pairs)
    correct = sum(mdl.correct_count(m, s) for m, s in pairs)
    return loss_total / n, correct / n


def variance_level(cfg: ArchitectureConfig) -> str:
    """Which ring level's gradient variance characterises ``cfg``."""
    if cfg.name == "RING":
        return "flat"
    if cfg.global_level == "ring":
        return "global"
    if cfg.group_level == "ring" or cfg.hierarchy == "pluralistic":
        return "group"
    return "flat"


class Simulation:
    """Mutable training state advanced one scheduled step at a time.

    ``models[i]`` is node ``i``'s current model. Nodes absent from a step's
    active set are untouched until a sync writes to them.
    """

    def __init__(self, cfg: ArchitectureConfig, fed: FederatedDataset, hyper: Hyperparams, seed: int,
                 grouping: GroupAssignment | None = None, rings: Rings | None = None,
                 init: np.ndarray | None = None) -> None:
        self.cfg, self.fed, self.hyper, self.seed = cfg, fed, hyper, seed
        self.grouping_report = None
        if grouping is None:
            grouping, self.grouping_report = make_grouping(cfg, fed, seed)
        if grouping.num_nodes != fed.num_nodes:
            raise InvalidArgument("grouping does not cover the dataset's nodes")
        self.grouping = grouping
        self.rings = rings if rings is not None else build_rings(cfg, grouping, derive_seed(seed, "rings"))
        self.top_chains, self.group_chains = effective_chains(cfg, grouping)
        self.groups = grouping.groups()
        self.data = [fed.examples(i) for i in range(fed.num_nodes)]
        self.sizes = [len(d) for d in self.data]
        k, d = fed.num_classes, fed.feature_dim
        self.model_bytes = mdl.model_bytes(k, d)
        if init is None:
            init = mdl.init_params(k, d, substream(seed, "init"))
        elif init.shape != (mdl.param_count(k, d),):
            raise InvalidArgument("initial model has the wrong dimension")
        self.models = np.tile(np.asarray(init, dtype=np.float64), (fed.num_nodes, 1))
        self._plans = iter_schedule(cfg, grouping, self.rings, hyper.steps, self.model_bytes)
        self._batch_rng = substream(seed, "batch") if hyper.batch_size else None
        self.t = 0
        self.cum_bytes = 0
        self._global_model: np.ndarray | None = None
        self._global_t = -1
        self._synced: dict[int, tuple[int, np.ndarray]] = {}

    def step(self) -> StepPlan:
        plan = next(self._plans)
        eta, batch = self.hyper.eta, self.hyper.batch_size
        for _, i in plan.active:
            self.models[i] = mdl.sgd_step(self.models[i], self.data[i], eta, batch, self._batch_rng)
        self._apply(plan.group_syncs, is_global=False)
        self._apply(plan.global_syncs, is_global=True)
        self.t += 1
        self.cum_bytes += plan.bytes
        touched = [i for _, i in plan.active]
        if touched and not np.isfinite(self.models[touched]).all():
            raise DivergedError(self.t, f"{self.cfg.name}")
        return plan

    def aggregate(self, sources: Sequence[Sequence[int]]) -> np.ndarray:
        """Two-level data-weighted average: within each source tuple, then across tuples."""
        inner, weights = [], []
        for src in sources:
            n = sum(self.sizes[i] for i in src)
            inner.append(mdl.weighted_average([self.models[i] for i in src], [self.sizes[i] / n for i in src]))
            weights.append(n)
        if len(inner) == 1:
            return inner[0]
        total = sum(weights)
        return mdl.weighted_average(inner, [w / total for w in weights])

    def _apply(self, events: Sequence[Sync], is_global: bool) -> None:
        values = []
        for e in events:
            if e.kind == "transfer":
                values.append(self.models[e.sources[0][0]].copy())
            else:
                values.append(self.aggregate(e.sources))
        for e, v in zip(events, values):
            self.models[list(e.targets)] = v
            if e.kind == "aggregate":
                self._remember(e.targets, v)
        if is_global and events and self.cfg.name in STAR_GLOBAL:
            self._global_model = values[0]
            self._global_t = self.t + 1

    def _remember(self, targets: Sequence[int], value: np.ndarray) -> None:
        """Keep the aggregate of every group it fully covers, so readouts at a sync step return it unchanged."""
        covered = set(targets)
        for k in {int(self.grouping.membership[i]) for i in targets}:
            if covered.issuperset(self.groups[k]):
                self._synced[k] = (self.t + 1, value)

    def _mean(self, nodes: Sequence[int]) -> np.ndarray:
        return mdl.weighted_average([self.models[i] for i in nodes], [1.0 / len(nodes)] * len(nodes))

    def _ring_heads(self, k: int) -> list[int]:
        ring = self.rings.per_group[k]
        seg = self.t // self.cfg.round_interval
        return [ring[seg + c] for c in range(self.group_chains[k])]

    def _top_heads(self) -> list[int]:
        seg = self.t // self.cfg.tau
        return [self.rings.top[seg + c] for c in range(self.top_chains)]

    def group_model(self, k: int) -> np.ndarray:
        """Readout of group ``k``: its star average, or the mean of the chain models inside its ring."""
        cfg = self.cfg
        if cfg.group_level == "flat":
            return self.consensus_model()
        if cfg.name == "RING-rings":
            ring = self.rings.per_group[k]
            return self.models[ring[self.t // cfg.tau1]].copy()
        if cfg.group_level == "ring":
            return self._mean(self._ring_heads(k))
        synced = self._synced.get(k)
        if synced is not None and synced[0] == self.t:
            return synced[1].copy()
        return self.aggregate((self.groups[k],))

    def group_models(self) -> list[np.ndarray]:
        return [self.group_model(k) for k in range(self.grouping.num_groups)]

    def consensus_model(self) -> np.ndarray:
        """The single model this architecture would report after ``t`` steps."""
        name = self.cfg.name
        if name in STAR_GLOBAL:
            if self._global_t == self.t and self._global_model is not None:
                return self._global_model.copy()
            if name == "STAR-stars":
                return self.aggregate(self.groups)
            return self.aggregate((tuple(range(self.fed.num_nodes)),))
        if name == "RING":
            return self._mean(self._top_heads())
        sizes = [sum(self.sizes[i] for i in g) for g in self.groups]
        return mdl.weighted_average(self.group_models(), [s / sum(sizes) for s in sizes])


def _test_examples(test: Examples | FederatedDataset) -> Examples:
    return test.pooled() if isinstance(test, FederatedDataset) else test


def _measure(sim: Simulation, test: Examples | FederatedDataset, pooled_train: Examples,
             test_pooled: Examples) -> tuple[EvalRecord, np.ndarray]:
    from .analysis import ring_variance

    cfg, fed = sim.cfg, sim.fed
    level = variance_level(cfg)
    if cfg.hierarchy == "pluralistic":
        if not isinstance(test, FederatedDataset):
            raise InvalidArgument("pluralistic evaluation needs per-node test shards")
        gms = sim.group_models()
        train_l, train_a = evaluate([(gms[k], fed.pooled(g)) for k, g in enumerate(sim.groups)])
        test_l, test_a = evaluate([(gms[k], test.pooled(g)) for k, g in enumerate(sim.groups)])
        var = ring_variance(fed, gms, sim.grouping, level)
        readout = sim.consensus_model()
    else:
        readout = sim.consensus_model()
        train_l, train_a = evaluate(readout, pooled_train)
        test_l, test_a = evaluate(readout, test_pooled)
        var = ring_variance(fed, readout, sim.grouping, level)
    return EvalRecord(sim.t, train_l, train_a, test_l, test_a, sim.cum_bytes, var), readout


def run(cfg: ArchitectureConfig, fed: FederatedDataset, test: Examples | FederatedDataset, hyper: Hyperparams,
        seed: int, eval_every: int = 10, target_accuracy: float | None = None,
        grouping: GroupAssignment | None = None, keep_snapshots: bool = False) -> RunResult:
    """Train ``cfg`` for ``hyper.steps`` steps, evaluating every ``eval_every`` steps.

    With ``target_accuracy`` the run stops at the first synchronised step
    (a multiple of the architecture's sync interval) whose train accuracy
    reaches it; readouts between syncs are never communicated, so they do
    not count. Those steps are evaluated whatever ``eval_every`` is.
    """
    if eval_every < 1:
        raise InvalidArgument("eval_every must be >= 1")
    if isinstance(test, FederatedDataset) and test.num_nodes != fed.num_nodes:
        raise InvalidArgument("test shards do not match the training nodes")
    sim = Simulation(cfg, fed, hyper, seed, grouping=grouping)
    pooled_train, test_pooled = fed.pooled(), _test_examples(test)
    records, snapshots = [], []
    reached = None

    def record() -> bool:
        rec, readout = _measure(sim, test, pooled_train, test_pooled)
        records.append(rec)
        if keep_snapshots:
            snapshots.append(readout)
        synced = sim.t % cfg.sync_interval == 0
        return target_accuracy is not None and synced and rec.train_accuracy >= target_accuracy

    hit = record()
    while not hit and sim.t < hyper.steps:
        sim.step()
        at_sync = target_accuracy is not None and sim.t % cfg.sync_interval == 0
        if sim.t % eval_every == 0 or sim.t == hyper.steps or at_sync:
            hit = record()
    if target_accuracy is not None:
        reached = hit
    return RunResult(cfg.name, records, sim.consensus_model(), sim.group_models(), sim.models.copy(), sim.t,
                     sim.cum_bytes, sim.grouping, sim.grouping_report, reached, snapshots)


def run_centralized(fed: FederatedDataset, hyper: Hyperparams, seed: int,
                    test: Examples | FederatedDataset | None = None, eval_every: int = 10) -> RunResult:
    """Full-batch gradient descent on the union of all node data."""
    from .analysis import ring_variance

    if eval_every < 1:
        raise InvalidArgument("eval_every must be >= 1")
    k, d = fed.num_classes, fed.feature_dim
    w = mdl.init_params(k, d, substream(seed, "init"))
    pooled = fed.pooled()
    test_pooled = pooled if test is None else _test_examples(test)
    rng = substream(seed, "batch") if hyper.batch_size else None
    records = []

    def record(step: int) -> None:
        tl, ta = evaluate(w, pooled)
        vl, va = evaluate(w, test_pooled)
        records.append(EvalRecord(step, tl, ta, vl, va, 0, ring_variance(fed, w, None, "flat")))

    record(0)
    for t in range(1, hyper.steps + 1):
        w = mdl.sgd_step(w, pooled, hyper.eta, hyper.batch_size, rng)
        if not np.isfinite(w).all():
            raise DivergedError(t, "centralized")
        if t % eval_every == 0 or t == hyper.steps:
            record(t)
    return RunResult("centralized", records, w.copy(), [w.copy()], w[None, :].copy(), hyper.steps, 0)
