"""Preset comparisons and node-count sweeps on the synthetic benchmark."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .dataset import FederatedDataset, generate_synthetic, train_test_split
from .engine import RunResult, run
from .errors import DivergedError, InvalidArgument
from .model import Hyperparams
from .topology import ArchitectureConfig

log = logging.getLogger(__name__)

CSV_HEADER = ["preset", "step", "train_loss", "train_acc", "test_loss", "test_acc", "cum_bytes", "ring_variance"]


@dataclass(frozen=True)
class DataSpec:
    num_nodes: int = 20
    num_classes: int = 10
    feature_dim: int = 32
    train_per_node: int = 200
    test_per_node: int = 50
    skew: float = 0.8
    class_sep: float = 3.0

    def __post_init__(self) -> None:
        for name in ("num_nodes", "train_per_node", "test_per_node", "feature_dim"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be >= 1")
        if self.num_classes < 2:
            raise InvalidArgument("num_classes must be >= 2")
        if not 0.0 <= self.skew <= 1.0:
            raise InvalidArgument("skew must lie in [0, 1]")
        if not self.class_sep > 0:
            raise InvalidArgument("class_sep must be > 0")

    def build(self, seed: int, num_nodes: int | None = None) -> tuple[FederatedDataset, FederatedDataset]:
        """Train and per-node test shards; the seed fixes the class means for every node count."""
        n = self.num_nodes if num_nodes is None else num_nodes
        fed = generate_synthetic(n, self.num_classes, self.feature_dim, self.train_per_node + self.test_per_node,
                                 self.skew, seed, self.class_sep)
        return train_test_split(fed, self.test_per_node, seed)


@dataclass(frozen=True)
class PresetSpec:
    """An architecture plus grouping recipe; ``group_size`` fixes ``ceil(N / group_size)`` groups."""
    name: str
    architecture: str
    grouping_scheme: str = "single"
    group_size: int | None = None
    chains: int = 1
    tau1: int = 10
    tau2: int = 10
    tau: int = 100
    clamp_chains: bool = False

    def num_groups(self, num_nodes: int) -> int:
        return 1 if self.group_size is None else math.ceil(num_nodes / self.group_size)

    def config(self, num_nodes: int, num_groups: int | None = None) -> ArchitectureConfig:
        g = self.num_groups(num_nodes) if num_groups is None else num_groups
        return ArchitectureConfig.from_name(
            self.architecture, grouping_scheme=self.grouping_scheme, num_groups=g, chains=self.chains,
            tau1=self.tau1, tau2=self.tau2, tau=self.tau, clamp_chains=self.clamp_chains)


DEFAULT_PRESETS: tuple[PresetSpec, ...] = (
    PresetSpec("FedAvg", "STAR"),
    PresetSpec("HierFAVG", "STAR-stars", "random", 5),
    PresetSpec("Astraea", "STAR-rings", "iid", 2, chains=1),
    PresetSpec("MM-PSGD", "RING-stars", "cluster", 10, chains=1),
    PresetSpec("Tornado", "RING-stars", "iid", 2, chains=2),
    PresetSpec("Tornadoes", "STAR-rings", "cluster", 10, chains=10, clamp_chains=True),
    PresetSpec("IFCA", "stars", "cluster", 10),
    PresetSpec("SemiCyclic", "rings", "random", 5, chains=1),
    PresetSpec("Tornado-rings", "rings", "cluster", 10, chains=10, clamp_chains=True),
)

PRESETS = {p.name: p for p in DEFAULT_PRESETS}


@dataclass(frozen=True)
class ExperimentSpec:
    data: DataSpec = field(default_factory=DataSpec)
    presets: tuple[PresetSpec, ...] = DEFAULT_PRESETS
    eta: float = 0.03
    steps: int = 1000
    eval_every: int = 10
    sweep_nodes: tuple[int, ...] = (10, 20, 30, 40, 50, 60, 70, 80, 90, 100)
    sweep_presets: tuple[str, ...] = ("FedAvg", "Tornadoes")

    def __post_init__(self) -> None:
        names = [p.name for p in self.presets]
        if len(set(names)) != len(names):
            raise InvalidArgument("preset names must be unique")
        if not self.presets:
            raise InvalidArgument("at least one preset is required")
        if any(b <= a for a, b in zip(self.sweep_nodes, self.sweep_nodes[1:])) or not self.sweep_nodes:
            raise InvalidArgument("sweep node counts must be strictly increasing")
        if self.sweep_nodes[0] < 1:
            raise InvalidArgument("sweep node counts must be >= 1")
        unknown = [n for n in self.sweep_presets if n not in names]
        if unknown:
            raise InvalidArgument(f"sweep presets {unknown} are not defined")
        if self.eval_every < 1:
            raise InvalidArgument("eval_every must be >= 1")
        Hyperparams(self.eta, self.steps)

    @property
    def hyper(self) -> Hyperparams:
        return Hyperparams(self.eta, self.steps)

    def preset(self, name: str) -> PresetSpec:
        for p in self.presets:
            if p.name == name:
                return p
        raise InvalidArgument(f"unknown preset {name!r}")


@dataclass
class SweepRow:
    preset: str
    num_nodes: int
    num_groups: int
    target_accuracy: float
    reached: bool
    steps: int
    total_bytes: int
    bytes_per_round: float
    relative_bytes: float = 1.0


@dataclass
class ComparisonReport:
    seed: int
    results: dict[str, RunResult] = field(default_factory=dict)
    diverged: dict[str, int] = field(default_factory=dict)
    sweep: list[SweepRow] = field(default_factory=list)

    def curves_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for name, result in self.results.items():
            for r in result.records:
                writer.writerow([name, r.step, repr(r.train_loss), repr(r.train_accuracy), repr(r.test_loss),
                                 repr(r.test_accuracy), r.cum_comm_bytes, repr(r.ring_variance)])
        return buf.getvalue()

    def sweep_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        cols = list(SweepRow.__dataclass_fields__)
        writer.writerow(cols)
        for row in self.sweep:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(row, c) for c in cols)])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "presets": {name: r.summary() for name, r in self.results.items()},
            "diverged": dict(self.diverged),
            "sweep": [asdict(row) for row in self.sweep],
        }

    def write(self, out_dir: str | Path, stem: str = "comparison") -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        if self.results or self.diverged:
            written.append(out / f"{stem}.csv")
            written[-1].write_text(self.curves_csv())
        if self.sweep:
            written.append(out / f"{stem}_sweep.csv")
            written[-1].write_text(self.sweep_csv())
        written.append(out / f"{stem}_summary.json")
        written[-1].write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return written


def run_comparison(spec: ExperimentSpec, seed: int) -> ComparisonReport:
    """Every preset on one dataset with one seed; diverged presets are listed, not raised."""
    train, test = spec.data.build(seed)
    report = ComparisonReport(seed)
    for preset in spec.presets:
        cfg = preset.config(train.num_nodes)
        try:
            report.results[preset.name] = run(cfg, train, test, spec.hyper, seed, eval_every=spec.eval_every)
        except DivergedError as err:
            log.warning("preset %s diverged at step %d", preset.name, err.step)
            report.diverged[preset.name] = err.step
    return report


def run_scalability_sweep(spec: ExperimentSpec, target_accuracy: float | None, seed: int) -> ComparisonReport:
    """Bytes needed to reach a train-accuracy target as the node count grows.

    The group count stays at the value of the smallest node count, so groups
    grow with the federation. Without an explicit target each preset aims at
    the final train accuracy of its own smallest-node-count run.
    """
    report = ComparisonReport(seed)
    hyper = spec.hyper
    for name in spec.sweep_presets:
        preset = spec.preset(name)
        groups = preset.num_groups(spec.sweep_nodes[0])
        target = target_accuracy
        rows = []
        for n in spec.sweep_nodes:
            train, test = spec.data.build(seed, num_nodes=n)
            cfg = preset.config(n, num_groups=min(groups, n))
            if target is None:
                probe = run(cfg, train, test, hyper, seed, eval_every=spec.eval_every)
                target = probe.final.train_accuracy
            try:
                result = run(cfg, train, test, hyper, seed, eval_every=spec.eval_every, target_accuracy=target)
            except DivergedError as err:
                report.diverged[f"{name}@{n}"] = err.step
                continue
            rows.append(SweepRow(name, n, cfg.num_groups, float(target), bool(result.reached_target), result.steps,
                                 result.total_bytes, result.total_bytes / max(result.steps, 1)))
        base = rows[0].total_bytes if rows else 0
        report.sweep.extend(replace(r, relative_bytes=r.total_bytes / base if base else math.nan) for r in rows)
    return report
