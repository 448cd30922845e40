"""Numeric diagnostics: gradient divergences, smoothness estimates, drift bounds,
virtual centralized trajectories and the gradient variance a ring walk induces.

Every ``max over w`` in the underlying definitions is replaced by a max over
an explicit probe set, so all quantities here are empirical lower bounds of
their worst-case counterparts and bound checks must use matched probes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import model as mdl
from ._rng import substream
from .dataset import FederatedDataset
from .errors import InvalidArgument
from .grouping import GroupAssignment
from .model import Hyperparams
from .topology import ArchitectureConfig

BOUND_SLACK = 1e-6
NUM_RANDOM_PROBES = 64


@dataclass
class DivergenceEstimate:
    delta: float
    Delta: float
    D: float
    per_node: dict[int, float]
    per_group: dict[int, float]
    probes: int

    def to_dict(self) -> dict:
        return {"delta": self.delta, "Delta": self.Delta, "D": self.D, "probes": self.probes,
                "per_node": {str(k): v for k, v in self.per_node.items()},
                "per_group": {str(k): v for k, v in self.per_group.items()}}


@dataclass
class SmoothnessEstimate:
    beta_hat: float
    rho_hat: float
    probes: int


def _node_gradients(fed: FederatedDataset, params: np.ndarray) -> list[np.ndarray]:
    return [mdl.gradient(params, fed.examples(i)) for i in range(fed.num_nodes)]


def _check_dim(fed: FederatedDataset, params: np.ndarray) -> None:
    if np.asarray(params).shape != (mdl.param_count(fed.num_classes, fed.feature_dim),):
        raise InvalidArgument("model dimension does not match the dataset")


def estimate_divergences(fed: FederatedDataset, grouping: GroupAssignment,
                         probe_models: Sequence[np.ndarray]) -> DivergenceEstimate:
    """Local-to-group, group-to-global and local-to-global gradient divergence over ``probe_models``."""
    if len(probe_models) == 0:
        raise InvalidArgument("no probe models")
    if grouping.num_nodes != fed.num_nodes:
        raise InvalidArgument("grouping does not cover the dataset's nodes")
    groups = grouping.groups()
    pooled_groups = [fed.pooled(g) for g in groups]
    pooled_all = fed.pooled()
    node_max = np.zeros(fed.num_nodes)
    group_max = np.zeros(len(groups))
    global_max = np.zeros(fed.num_nodes)
    membership = grouping.membership
    for w in probe_models:
        _check_dim(fed, w)
        g_all = mdl.gradient(w, pooled_all)
        g_grp = [mdl.gradient(w, p) for p in pooled_groups]
        for k, gk in enumerate(g_grp):
            group_max[k] = max(group_max[k], float(np.linalg.norm(gk - g_all)))
        for i, gi in enumerate(_node_gradients(fed, w)):
            node_max[i] = max(node_max[i], float(np.linalg.norm(gi - g_grp[membership[i]])))
            global_max[i] = max(global_max[i], float(np.linalg.norm(gi - g_all)))
    sizes = fed.sizes.astype(np.float64)
    total = sizes.sum()
    group_sizes = np.array([sizes[list(g)].sum() for g in groups])
    return DivergenceEstimate(
        delta=float(np.dot(sizes / total, node_max)),
        Delta=float(np.dot(group_sizes / total, group_max)),
        D=float(np.dot(sizes / total, global_max)),
        per_node={i: float(v) for i, v in enumerate(node_max)},
        per_group={k: float(v) for k, v in enumerate(group_max)},
        probes=len(probe_models),
    )


def estimate_smoothness(fed: FederatedDataset,
                        probe_pairs: Iterable[tuple[np.ndarray, np.ndarray]]) -> SmoothnessEstimate:
    """Largest observed gradient and loss slope between paired models, over every
    node's loss and the global loss. Coincident pairs are skipped."""
    pooled = fed.pooled()
    datasets = [fed.examples(i) for i in range(fed.num_nodes)] + [pooled]
    beta = rho = 0.0
    used = 0
    for w, v in probe_pairs:
        _check_dim(fed, w)
        _check_dim(fed, v)
        dist = float(np.linalg.norm(w - v))
        if dist == 0.0:
            continue
        used += 1
        for data in datasets:
            beta = max(beta, float(np.linalg.norm(mdl.gradient(w, data) - mdl.gradient(v, data))) / dist)
            rho = max(rho, abs(mdl.loss(w, data) - mdl.loss(v, data)) / dist)
    if used == 0:
        raise InvalidArgument("every probe pair was coincident")
    return SmoothnessEstimate(beta, rho, used)


def smoothness_upper_bound(fed: FederatedDataset) -> float:
    """Analytic smoothness ceiling for softmax cross-entropy: half the largest
    squared norm of an input augmented with the bias coordinate."""
    x = fed.pooled().features
    return 0.5 * float((np.einsum("ij,ij->i", x, x) + 1.0).max())


def h_bound(eta: float, beta: float, t: int) -> float:
    """``(eta*beta + 1)**t - 1``; saturates to ``inf`` when the power overflows."""
    if not (eta > 0 and beta > 0):
        raise InvalidArgument("eta and beta must be > 0")
    if t < 0:
        raise InvalidArgument("t must be >= 0")
    exponent = t * math.log1p(eta * beta)
    if exponent > 709.0:
        return math.inf
    return math.expm1(exponent)


def random_probes(fed: FederatedDataset, seed: int, count: int = NUM_RANDOM_PROBES,
                  scale: float = 0.01) -> list[np.ndarray]:
    rng = substream(seed, "probes")
    return [mdl.init_params(fed.num_classes, fed.feature_dim, rng, scale) for _ in range(count)]


def probe_pairs(models: Sequence[np.ndarray], seed: int, extra: int = 64) -> list[tuple[np.ndarray, np.ndarray]]:
    """Consecutive pairs along ``models`` plus ``extra`` random pairs drawn from it."""
    pairs = list(zip(models[:-1], models[1:]))
    if len(models) > 1:
        rng = substream(seed, "probe-pairs")
        for _ in range(extra):
            a, b = rng.choice(len(models), size=2, replace=False)
            pairs.append((models[a], models[b]))
    return pairs


def ring_variance(fed: FederatedDataset, params: np.ndarray | Sequence[np.ndarray],
                  grouping: GroupAssignment | None, level: str) -> float:
    """Data-weighted ``E||g_u||^2 - ||E g_u||^2`` over ring units.

    ``flat``: units are nodes of the whole federation. ``group``: units are
    nodes within each group, and the per-group variances are combined by
    group data share; ``params`` may then hold one model per group.
    ``global``: units are groups, each contributing its pooled gradient.
    """
    if level not in ("flat", "group", "global"):
        raise InvalidArgument(f"unknown variance level {level!r}")
    if level != "flat" and grouping is None:
        raise InvalidArgument(f"level {level!r} needs a grouping")
    sizes = fed.sizes.astype(np.float64)
    total = sizes.sum()
    per_group = not isinstance(params, np.ndarray)
    if per_group and (level != "group" or len(params) != grouping.num_groups):
        raise InvalidArgument("per-group models are only meaningful at the group level, one per group")
    if level == "flat":
        _check_dim(fed, params)
        return _variance(_node_gradients(fed, params), sizes / total)
    if level == "global":
        _check_dim(fed, params)
        groups = grouping.groups()
        grads = [mdl.gradient(params, fed.pooled(g)) for g in groups]
        return _variance(grads, np.array([sizes[list(g)].sum() for g in groups]) / total)
    result = 0.0
    for k, g in enumerate(grouping.groups()):
        w = params[k] if per_group else params
        _check_dim(fed, w)
        n_k = sizes[list(g)].sum()
        grads = [mdl.gradient(w, fed.examples(i)) for i in g]
        result += (n_k / total) * _variance(grads, sizes[list(g)] / n_k)
    return result


def _variance(grads: Sequence[np.ndarray], weights: np.ndarray) -> float:
    second = sum(float(w * np.dot(g, g)) for g, w in zip(grads, weights))
    mean = sum(w * g for g, w in zip(grads, weights))
    return second - float(np.dot(mean, mean))


def unbiasedness_gap(fed: FederatedDataset, params: np.ndarray, grouping: GroupAssignment | None = None) -> float:
    """Max abs difference between the pooled gradient and the data-weighted mean
    of per-node gradients (and, given a grouping, of per-group gradients)."""
    sizes = fed.sizes.astype(np.float64)
    total = sizes.sum()
    pooled = mdl.gradient(params, fed.pooled())
    node_mean = sum((sizes[i] / total) * g for i, g in enumerate(_node_gradients(fed, params)))
    gap = float(np.abs(node_mean - pooled).max())
    if grouping is not None:
        group_mean = sum((sizes[list(g)].sum() / total) * mdl.gradient(params, fed.pooled(g))
                         for g in grouping.groups())
        gap = max(gap, float(np.abs(group_mean - pooled).max()))
    return gap


@dataclass
class VirtualTrace:
    """Federated global readout ``w_t`` against virtual centralized models.

    ``gaps[t]`` is ``F(w_t) - F(v_t)`` for ``t = 0..T``; ``sync_steps`` are the
    steps where the virtual global model was reset to ``w_t``. Models are kept
    only at the ``snapshot_steps``.
    """
    tau1: int
    tau2: int
    gaps: np.ndarray
    sync_steps: list[int]
    snapshot_steps: list[int]
    global_models: list[np.ndarray]
    virtual_global: list[np.ndarray]
    virtual_groups: list[list[np.ndarray]]
    node_models: list[np.ndarray]

    @property
    def max_gap(self) -> float:
        return float(self.gaps.max())

    def interval_max_gaps(self) -> list[float]:
        span = self.tau1 * self.tau2
        return [float(self.gaps[s:s + span + 1].max()) for s in range(0, len(self.gaps) - 1, span)]

    def probe_models(self) -> list[np.ndarray]:
        """Every snapshot model in step order: readout, virtual global, virtual groups, nodes."""
        out = []
        for j in range(len(self.snapshot_steps)):
            out.append(self.global_models[j])
            out.append(self.virtual_global[j])
            out.extend(self.virtual_groups[j])
            out.extend(self.node_models[j])
        return out


def run_virtual_trace(cfg: ArchitectureConfig, fed: FederatedDataset, grouping: GroupAssignment | None,
                      hyper: Hyperparams, seed: int, snapshot_every: int = 10) -> VirtualTrace:
    """Run a STAR or STAR-stars federation while co-simulating centralized
    gradient descent on each group's data and on all data, resetting the
    virtual models to the federated ones at the start of every interval."""
    from .engine import Simulation

    if cfg.name not in ("STAR", "STAR-stars"):
        raise InvalidArgument(f"virtual traces are defined for STAR and STAR-stars, not {cfg.name}")
    if snapshot_every < 1:
        raise InvalidArgument("snapshot_every must be >= 1")
    sim = Simulation(cfg, fed, hyper, seed, grouping=grouping)
    tau1, tau2 = (cfg.tau, 1) if cfg.name == "STAR" else (cfg.tau1, cfg.tau2)
    span = tau1 * tau2
    groups = sim.groups
    pooled_groups = [fed.pooled(g) for g in groups]
    pooled = fed.pooled()
    eta = hyper.eta

    w = sim.consensus_model()
    v = w.copy()
    vk = [w.copy() for _ in groups]
    trace = VirtualTrace(tau1, tau2, np.zeros(0), [0], [], [], [], [], [])
    gaps = [0.0]

    def snap() -> None:
        trace.snapshot_steps.append(sim.t)
        trace.global_models.append(w)
        trace.virtual_global.append(v.copy())
        trace.virtual_groups.append([m.copy() for m in vk])
        trace.node_models.append(list(sim.models.copy()))

    snap()
    for _ in range(hyper.steps):
        sim.step()
        t = sim.t
        v = v - eta * mdl.gradient(v, pooled)
        vk = [m - eta * mdl.gradient(m, p) for m, p in zip(vk, pooled_groups)]
        w = sim.consensus_model()
        if t % span == 0:
            v = w.copy()
            trace.sync_steps.append(t)
        if t % tau1 == 0:
            vk = [sim.aggregate((g,)) for g in groups]
        gaps.append(mdl.loss(w, pooled) - mdl.loss(v, pooled))
        if t % snapshot_every == 0 or t == hyper.steps:
            snap()
    trace.gaps = np.array(gaps)
    return trace


@dataclass
class BoundCheck:
    bound: float
    max_gap: float
    holds: bool
    zero_at_sync: bool
    h_tau1: float
    h_span: float

    def to_dict(self) -> dict:
        return {"bound": self.bound, "max_gap": self.max_gap, "holds": self.holds,
                "zero_at_sync": self.zero_at_sync, "h_tau1": self.h_tau1, "h_span": self.h_span}


def drift_bound(div: DivergenceEstimate, smooth: SmoothnessEstimate, eta: float, tau1: int, tau2: int) -> float:
    """``(rho/beta) * (delta*h(tau1) + Delta*h(tau1*tau2))``."""
    beta = smooth.beta_hat
    return smooth.rho_hat / beta * (div.delta * h_bound(eta, beta, tau1) + div.Delta * h_bound(eta, beta, tau1 * tau2))


def check_bound(trace: VirtualTrace, div: DivergenceEstimate, smooth: SmoothnessEstimate, eta: float,
                slack: float = BOUND_SLACK) -> BoundCheck:
    bound = drift_bound(div, smooth, eta, trace.tau1, trace.tau2)
    return BoundCheck(
        bound=bound,
        max_gap=trace.max_gap,
        holds=bool(trace.max_gap <= bound + slack),
        zero_at_sync=all(trace.gaps[s] == 0.0 for s in trace.sync_steps),
        h_tau1=h_bound(eta, smooth.beta_hat, trace.tau1),
        h_span=h_bound(eta, smooth.beta_hat, trace.tau1 * trace.tau2),
    )


def diagnose(cfg: ArchitectureConfig, fed: FederatedDataset, grouping: GroupAssignment, hyper: Hyperparams,
             seed: int) -> dict:
    """Trace a run, estimate every constant on the matched probe set, and check the drift bound."""
    trace = run_virtual_trace(cfg, fed, grouping, hyper, seed)
    probes = random_probes(fed, seed) + trace.probe_models()
    div = estimate_divergences(fed, grouping, probes)
    smooth = estimate_smoothness(fed, probe_pairs(probes, seed) + list(zip(trace.global_models, trace.virtual_global)))
    check = check_bound(trace, div, smooth, hyper.eta)
    return {
        "architecture": cfg.name, "tau1": trace.tau1, "tau2": trace.tau2, "eta": hyper.eta,
        "delta": div.delta, "Delta": div.Delta, "D": div.D,
        "beta_hat": smooth.beta_hat, "rho_hat": smooth.rho_hat,
        "h_tau1": check.h_tau1, "h_tau1_tau2": check.h_span,
        "h_overflow": math.isinf(check.h_span),
        "bound": check.bound, "max_gap": check.max_gap, "bound_holds": check.holds,
        "zero_at_sync": check.zero_at_sync, "probes": div.probes, "probe_pairs": smooth.probes,
        "gaps": [float(g) for g in trace.gaps],
    }
