"""Command-line front end.

Every subcommand writes its artifacts plus ``config.txt`` (the effective
settings) under ``--out`` and prints one summary line. Failures print a
single JSON error line to stderr and exit with 1 (usage), 2 (validation)
or 3 (runtime, including diverged training).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import analysis
from . import model as mdl
from .config import Config, parse_config
from .dataset import FederatedDataset, load_npz, save_npz
from .engine import RunResult, make_grouping, run, run_centralized
from .errors import ConfigError, DivergedError, InvalidArgument, ParseError
from .experiment import ComparisonReport, run_comparison, run_scalability_sweep

EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 1, 2, 3
SUBCOMMANDS = ("gen-data", "group", "run", "compare", "sweep", "diagnose")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit(2); usage errors are 1 here
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value settings file")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, default=0, help="root seed for every random sub-stream")
    common.add_argument("--set", dest="overrides", metavar="KEY=VALUE", action="append", default=[],
                        help="override one setting; repeatable, applied after --config")
    common.add_argument("--data", metavar="DIR", help="read train.npz/test.npz from DIR instead of generating")

    parser = _Parser(prog="tornadoagg", description="Star/ring federated learning simulator.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True, parser_class=_Parser)
    sub.add_parser("gen-data", parents=[common], help="generate the synthetic federated dataset")
    g = sub.add_parser("group", parents=[common], help="group nodes with the configured scheme")
    g.add_argument("--arch", help="architecture (sets arch.name)")
    r = sub.add_parser("run", parents=[common], help="train one architecture, or 'centralized'")
    r.add_argument("--arch", help="architecture name or 'centralized' (sets arch.name)")
    r.add_argument("--nodes", type=int, help="node count (sets data.num_nodes)")
    c = sub.add_parser("compare", parents=[common], help="run every preset on one benchmark")
    c.add_argument("--seeds", type=int, default=1, help="repeat over seeds seed..seed+N-1")
    sub.add_parser("sweep", parents=[common], help="bytes to reach a target accuracy versus node count")
    d = sub.add_parser("diagnose", parents=[common], help="divergence, smoothness and drift-bound report")
    d.add_argument("--arch", help="STAR or STAR-stars (sets arch.name)")
    return parser


def _config(args: argparse.Namespace) -> Config:
    overrides = list(args.overrides)
    if getattr(args, "arch", None):
        overrides.append(f"arch.name={args.arch}")
    if getattr(args, "nodes", None) is not None:
        overrides.append(f"data.num_nodes={args.nodes}")
    return parse_config(args.config, overrides)


def _data(args: argparse.Namespace, cfg: Config) -> tuple[FederatedDataset, FederatedDataset]:
    if args.data:
        root = Path(args.data)
        return load_npz(root / "train.npz"), load_npz(root / "test.npz")
    return cfg.data_spec().build(args.seed)


def _write_echo(out: Path, args: argparse.Namespace, cfg: Config) -> None:
    out.mkdir(parents=True, exist_ok=True)
    head = f"# command = {args.command}\n# seed = {args.seed}\n"
    if args.data:
        head += f"# data = {args.data}\n"
    (out / "config.txt").write_text(head + cfg.echo())


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_gen_data(args: argparse.Namespace, cfg: Config, out: Path) -> str:
    train, test = _data(args, cfg)
    save_npz(out / "train.npz", train)
    save_npz(out / "test.npz", test)
    return f"gen-data: {train.num_nodes} nodes, {train.total_examples} train / {test.total_examples} test examples"


def cmd_group(args: argparse.Namespace, cfg: Config, out: Path) -> str:
    train, _ = _data(args, cfg)
    arch = cfg.arch_config() if not cfg.is_centralized() else None
    if arch is None:
        raise ConfigError("arch.name", "grouping needs an architecture, not 'centralized'")
    assignment, report = make_grouping(arch, train, args.seed)
    (out / "grouping.json").write_text(assignment.to_json(report) + "\n")
    reduction = f", cost reduction {report.reduction:.4f}" if report else ""
    return f"group: {arch.grouping_scheme} into {assignment.num_groups} groups{reduction}"


def _run_outputs(out: Path, name: str, result: RunResult, train: FederatedDataset) -> None:
    report = ComparisonReport(seed=0, results={name: result})
    (out / "curves.csv").write_text(report.curves_csv())
    doc = result.summary()
    if result.grouping is not None:
        doc["grouping"] = result.grouping.to_dict()
    _write_json(out / "summary.json", doc)
    k, d = train.num_classes, train.feature_dim
    (out / "final.ckpt").write_bytes(mdl.checkpoint_bytes([result.final_model], k, d, result.steps))
    (out / "nodes.ckpt").write_bytes(mdl.checkpoint_bytes(list(result.node_models), k, d, result.steps))


def cmd_run(args: argparse.Namespace, cfg: Config, out: Path) -> str:
    train, test = _data(args, cfg)
    if cfg.is_centralized():
        result = run_centralized(train, cfg.hyper(), args.seed, test=test, eval_every=cfg["engine.eval_every"])
        name = "centralized"
    else:
        arch = cfg.arch_config()
        result = run(arch, train, test, cfg.hyper(), args.seed, eval_every=cfg["engine.eval_every"])
        name = arch.name
    _run_outputs(out, name, result, train)
    last = result.final
    return (f"run {name}: {result.steps} steps, train loss {last.train_loss:.6f}, "
            f"test acc {last.test_accuracy:.4f}, {result.total_bytes} bytes")


def cmd_compare(args: argparse.Namespace, cfg: Config, out: Path) -> str:
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    spec = cfg.experiment_spec()
    seeds = list(range(args.seed, args.seed + args.seeds))
    finals: dict[str, list[float]] = {}
    for s in seeds:
        report = run_comparison(spec, s)
        report.write(out if len(seeds) == 1 else out / f"seed_{s}")
        for name, r in report.results.items():
            finals.setdefault(name, []).append(r.final.test_accuracy)
    if len(seeds) > 1:
        _write_json(out / "seeds_summary.json", {"seeds": seeds, "final_test_accuracy": finals})
    best = max(finals, key=lambda n: sum(finals[n]) / len(finals[n])) if finals else "none"
    return f"compare: {len(spec.presets)} presets x {len(seeds)} seed(s), best mean test accuracy: {best}"


def cmd_sweep(args: argparse.Namespace, cfg: Config, out: Path) -> str:
    spec = cfg.experiment_spec()
    report = run_scalability_sweep(spec, cfg["experiment.target_accuracy"], args.seed)
    report.write(out, stem="sweep")
    reached = sum(r.reached for r in report.sweep)
    return f"sweep: {len(report.sweep)} runs over {len(spec.sweep_nodes)} node counts, {reached} reached the target"


def cmd_diagnose(args: argparse.Namespace, cfg: Config, out: Path) -> str:
    train, _ = _data(args, cfg)
    if cfg.is_centralized():
        raise ConfigError("arch.name", "diagnostics need STAR or STAR-stars")
    arch = cfg.arch_config()
    if arch.name not in ("STAR", "STAR-stars"):
        raise ConfigError("arch.name", f"diagnostics need STAR or STAR-stars, not {arch.name}")
    grouping, _ = make_grouping(arch, train, args.seed)
    doc = analysis.diagnose(arch, train, grouping, cfg.hyper(), args.seed)
    _write_json(out / "diagnostics.json", doc)
    return (f"diagnose {arch.name}: delta {doc['delta']:.6g}, Delta {doc['Delta']:.6g}, D {doc['D']:.6g}, "
            f"beta {doc['beta_hat']:.6g}, rho {doc['rho_hat']:.6g}, bound holds: {doc['bound_holds']}")


COMMANDS = {"gen-data": cmd_gen_data, "group": cmd_group, "run": cmd_run, "compare": cmd_compare,
            "sweep": cmd_sweep, "diagnose": cmd_diagnose}


def _fail(code: int, kind: str, message: str, **extra) -> int:
    print(json.dumps({"error": kind, "exit_code": code, "message": message, **extra}, sort_keys=True),
          file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except UsageError as err:
        return _fail(EXIT_USAGE, "usage", str(err))
    try:
        cfg = _config(args)
        out = Path(args.out)
        _write_echo(out, args, cfg)
        print(COMMANDS[args.command](args, cfg, out))
    except UsageError as err:
        return _fail(EXIT_USAGE, "usage", str(err))
    except ConfigError as err:
        return _fail(EXIT_VALIDATION, "config", str(err), key=err.key)
    except ParseError as err:
        return _fail(EXIT_VALIDATION, "parse", str(err), field=err.field)
    except InvalidArgument as err:
        return _fail(EXIT_VALIDATION, "invalid-argument", str(err))
    except DivergedError as err:
        return _fail(EXIT_RUNTIME, "diverged", str(err), step=err.step)
    except (OSError, RuntimeError) as err:
        return _fail(EXIT_RUNTIME, "runtime", str(err))
    return 0
