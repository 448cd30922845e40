"""Line-oriented ``key = value`` configuration with dotted section keys.

Blank lines and ``#`` comments are ignored. Every key has a type and a
default; unknown keys, unparsable values and violated constraints raise
:class:`ConfigError` naming the offending key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Sequence

from .errors import ConfigError, InvalidArgument
from .experiment import DEFAULT_PRESETS, PRESETS, DataSpec, ExperimentSpec
from .model import Hyperparams
from .topology import ARCHITECTURES, SCHEMES, ArchitectureConfig

CENTRALIZED = "centralized"


def _int(text: str) -> int:
    return int(text, 10)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(_int(p.strip()) for p in text.split(",") if p.strip())


def _names(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def _target(text: str) -> float | None:
    return None if text.lower() == "auto" else float(text)


def _fmt(value: Any) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    type_name: str


_DATA = DataSpec()
_EXP = ExperimentSpec()

SCHEMA: dict[str, Key] = {
    "data.num_nodes": Key(_int, _DATA.num_nodes, "int"),
    "data.num_classes": Key(_int, _DATA.num_classes, "int"),
    "data.feature_dim": Key(_int, _DATA.feature_dim, "int"),
    "data.train_per_node": Key(_int, _DATA.train_per_node, "int"),
    "data.test_per_node": Key(_int, _DATA.test_per_node, "int"),
    "data.skew": Key(float, _DATA.skew, "float"),
    "data.class_sep": Key(float, _DATA.class_sep, "float"),
    "engine.eta": Key(float, _EXP.eta, "float"),
    "engine.steps": Key(_int, _EXP.steps, "int"),
    "engine.eval_every": Key(_int, _EXP.eval_every, "int"),
    "engine.tau": Key(_int, 100, "int"),
    "engine.tau1": Key(_int, 10, "int"),
    "engine.tau2": Key(_int, 10, "int"),
    "arch.name": Key(str, "STAR", "str"),
    "arch.chains": Key(_int, 1, "int"),
    "arch.clamp_chains": Key(_bool, False, "bool"),
    "grouping.scheme": Key(str, "single", "str"),
    "grouping.num_groups": Key(_int, 1, "int"),
    "experiment.presets": Key(_names, tuple(p.name for p in DEFAULT_PRESETS), "name list"),
    "experiment.sweep_nodes": Key(_ints, _EXP.sweep_nodes, "int list"),
    "experiment.sweep_presets": Key(_names, _EXP.sweep_presets, "name list"),
    "experiment.target_accuracy": Key(_target, None, "float or 'auto'"),
}


class Config:
    """Validated typed settings; read values with ``cfg["data.skew"]``."""

    def __init__(self, values: dict[str, Any]) -> None:
        self._values = dict(values)
        _validate(self._values)

    def __getitem__(self, key: str) -> Any:
        return self._values[key]

    def replace(self, **updates: Any) -> "Config":
        """Copy with updates; keyword names use ``__`` in place of the dot."""
        values = dict(self._values)
        for name, value in updates.items():
            key = name.replace("__", ".")
            if key not in SCHEMA:
                raise ConfigError(key, "unknown key")
            values[key] = value
        return Config(values)

    def echo(self) -> str:
        """Every effective setting, one ``key = value`` line each, in key order."""
        return "".join(f"{k} = {_fmt(self._values[k])}\n" for k in sorted(self._values))

    def data_spec(self) -> DataSpec:
        v = self._values
        return DataSpec(v["data.num_nodes"], v["data.num_classes"], v["data.feature_dim"],
                        v["data.train_per_node"], v["data.test_per_node"], v["data.skew"], v["data.class_sep"])

    def hyper(self) -> Hyperparams:
        return Hyperparams(self["engine.eta"], self["engine.steps"])

    def is_centralized(self) -> bool:
        return self["arch.name"].lower() == CENTRALIZED

    def arch_config(self) -> ArchitectureConfig:
        v = self._values
        arch = ArchitectureConfig.from_name(v["arch.name"], tau=v["engine.tau"], tau1=v["engine.tau1"],
                                            tau2=v["engine.tau2"], chains=v["arch.chains"],
                                            clamp_chains=v["arch.clamp_chains"])
        if arch.hierarchy == "flat":
            return arch
        return ArchitectureConfig.from_name(v["arch.name"], grouping_scheme=v["grouping.scheme"],
                                            num_groups=v["grouping.num_groups"], tau=arch.tau, tau1=arch.tau1,
                                            tau2=arch.tau2, chains=arch.chains, clamp_chains=arch.clamp_chains)

    def experiment_spec(self) -> ExperimentSpec:
        v = self._values
        presets = tuple(replace(PRESETS[name], tau=v["engine.tau"], tau1=v["engine.tau1"], tau2=v["engine.tau2"])
                        for name in v["experiment.presets"])
        return ExperimentSpec(self.data_spec(), presets, v["engine.eta"], v["engine.steps"], v["engine.eval_every"],
                              v["experiment.sweep_nodes"], v["experiment.sweep_presets"])


def _require(cond: bool, key: str, message: str) -> None:
    if not cond:
        raise ConfigError(key, message)


def _validate(v: dict[str, Any]) -> None:
    for key in ("data.num_nodes", "data.feature_dim", "data.train_per_node", "data.test_per_node",
                "engine.steps", "engine.eval_every", "engine.tau", "engine.tau1", "engine.tau2",
                "arch.chains", "grouping.num_groups"):
        _require(v[key] >= 1, key, f"must be >= 1, got {v[key]}")
    _require(v["data.num_classes"] >= 2, "data.num_classes", "must be >= 2")
    _require(0.0 <= v["data.skew"] <= 1.0, "data.skew", "must lie in [0, 1]")
    _require(v["data.class_sep"] > 0 and math.isfinite(v["data.class_sep"]), "data.class_sep", "must be > 0")
    _require(v["engine.eta"] > 0 and math.isfinite(v["engine.eta"]), "engine.eta", "must be > 0")
    known = {a.lower() for a in ARCHITECTURES} | {CENTRALIZED}
    _require(v["arch.name"].lower() in known, "arch.name",
             f"unknown architecture {v['arch.name']!r}; expected one of {ARCHITECTURES + (CENTRALIZED,)}")
    _require(v["grouping.scheme"] in SCHEMES, "grouping.scheme", f"must be one of {SCHEMES}")
    _require(v["grouping.num_groups"] <= v["data.num_nodes"], "grouping.num_groups",
             f"{v['grouping.num_groups']} groups exceed {v['data.num_nodes']} nodes")
    if v["grouping.scheme"] == "single":
        _require(v["grouping.num_groups"] == 1, "grouping.num_groups", "scheme 'single' needs exactly 1 group")
    name = v["arch.name"].lower()
    if name.startswith("ring-") and not v["arch.clamp_chains"]:
        _require(v["arch.chains"] <= v["grouping.num_groups"], "arch.chains",
                 f"{v['arch.chains']} chains exceed {v['grouping.num_groups']} groups on the global ring")
    if name == "ring" and not v["arch.clamp_chains"]:
        _require(v["arch.chains"] <= v["data.num_nodes"], "arch.chains",
                 f"{v['arch.chains']} chains exceed {v['data.num_nodes']} nodes on the ring")
    unknown = [p for p in v["experiment.presets"] if p not in PRESETS]
    _require(not unknown, "experiment.presets", f"unknown presets {unknown}")
    _require(len(set(v["experiment.presets"])) == len(v["experiment.presets"]), "experiment.presets",
             "duplicate preset")
    _require(bool(v["experiment.presets"]), "experiment.presets", "at least one preset is required")
    nodes = v["experiment.sweep_nodes"]
    _require(bool(nodes) and nodes[0] >= 1 and all(b > a for a, b in zip(nodes, nodes[1:])),
             "experiment.sweep_nodes", "must be positive and strictly increasing")
    missing = [p for p in v["experiment.sweep_presets"] if p not in v["experiment.presets"]]
    _require(not missing, "experiment.sweep_presets", f"presets {missing} are not in experiment.presets")
    target = v["experiment.target_accuracy"]
    _require(target is None or 0.0 < target <= 1.0, "experiment.target_accuracy", "must lie in (0, 1] or be auto")


def _assign(values: dict[str, Any], key: str, text: str) -> None:
    if key not in SCHEMA:
        raise ConfigError(key, "unknown key")
    spec = SCHEMA[key]
    try:
        values[key] = spec.parse(text.strip())
    except ValueError:
        raise ConfigError(key, f"expected {spec.type_name}, got {text.strip()!r}") from None


def parse_text(text: str, overrides: Sequence[str] = ()) -> Config:
    values = {k: s.default for k, s in SCHEMA.items()}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        _assign(values, key.strip(), value)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, value = item.split("=", 1)
        _assign(values, key.strip(), value)
    try:
        return Config(values)
    except InvalidArgument as err:
        raise ConfigError("config", str(err)) from None


def parse_config(path: str | Path | None, overrides: Sequence[str] = ()) -> Config:
    """Defaults, then the file (if any), then ``overrides`` in order."""
    text = "" if path is None else Path(path).read_text()
    return parse_text(text, overrides)
