from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
from typing import Any, Dict

from errors import ConfigurationError, TopologyError
from experiment_config import TASKS, ConfigRegistry, ExperimentConfig, load_document
from experiments import build_graph, run_experiment
from threeway import dump_topology, validate_topology
from utils import json_safe, parse_float_list, setup_logging


EXIT_OK = 0
EXIT_RUN_FAILED = 1
EXIT_CONFIG_ERROR = 2

logger = logging.getLogger(__name__)


def _float_list_arg(value: str):
    try:
        return parse_float_list(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _switch(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected 'on' or 'off', got '{value}'")
    return value == "on"


def _update_config_from_args(document: Dict[str, Any], args: argparse.Namespace) -> Dict[str, Any]:
    experiment = document.setdefault("experiment", {})
    topology = document.setdefault("topology", {})
    loop = document.setdefault("loop", {})

    if args.seeds is not None:
        base = args.seed if args.seed is not None else 0
        experiment["seeds"] = list(range(base, base + args.seeds))
    elif args.seed is not None:
        experiment["seeds"] = [args.seed]
    if args.duration is not None:
        experiment["duration"] = args.duration
    if args.out is not None:
        experiment["output_dir"] = args.out
    if args.jobs is not None:
        experiment["jobs"] = args.jobs
    if args.kp is not None:
        loop["kp"] = args.kp
    if args.trace_tau is not None:
        loop["trace_tau"] = args.trace_tau
    if args.twin is not None:
        topology["twin_hidden"] = args.twin
    if args.shadow is not None:
        topology["shadow_inhibition"] = args.shadow
    if args.direction is not None:
        topology["direction_neurons"] = args.direction

    if getattr(args, "values", None) is not None:
        document.setdefault("sweep", {})["values"] = args.values
    if getattr(args, "tasks", None):
        document.setdefault("sweep", {})["tasks"] = args.tasks
    if getattr(args, "sigma", None) is not None:
        document.setdefault("mismatch", {})["sigma_m"] = args.sigma
    if getattr(args, "compare", None) is not None:
        document.setdefault("mismatch", {})["compare"] = args.compare
    return document


def load_config(kind: str, args: argparse.Namespace) -> ExperimentConfig:
    registry = ConfigRegistry()
    if args.config:
        path = Path(args.config)
        document = load_document(path, kind)
    else:
        path = None
        document = registry.default_document(kind)
    return ExperimentConfig.from_dict(_update_config_from_args(document, args), path)


def _config_error(exc: Exception) -> int:
    logger.error(f"Invalid configuration: {exc}")
    print(json.dumps({"success": False, "error": str(exc)}, indent=2))
    return EXIT_CONFIG_ERROR


def command_run(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.kind, args)
    except ConfigurationError as exc:
        return _config_error(exc)

    result = run_experiment(cfg)
    print(json.dumps(json_safe(result), indent=2))
    return EXIT_OK if result["success"] else EXIT_RUN_FAILED


def command_validate(args: argparse.Namespace) -> int:
    try:
        cfg = load_config("step", args)
        graph = build_graph(cfg.topology)
    except (ConfigurationError, TopologyError) as exc:
        return _config_error(exc)

    violations = validate_topology(graph)
    report: Dict[str, Any] = {
        "ok": not violations,
        "neurons": graph.size,
        "synapses": len(graph.synapses),
        "populations": {name: len(ids) for name, ids in graph.populations.items()},
        "violations": violations,
    }
    if args.dump:
        try:
            report["dump"] = str(dump_topology(graph, Path(args.dump)))
        except OSError as exc:
            report["error"] = f"Could not write topology dump: {exc}"
            print(json.dumps(report, indent=2))
            return EXIT_RUN_FAILED
    print(json.dumps(report, indent=2))
    return EXIT_OK if not violations else EXIT_RUN_FAILED


def _add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML configuration replacing the published default")
    parser.add_argument("--seed", type=int, help="Single seed, or the first seed when --seeds is given")
    parser.add_argument("--seeds", type=int, help="Number of consecutive seeds to run")
    parser.add_argument("--kp", type=float)
    parser.add_argument("--trace-tau", type=float, help="Output trace time constant (s)")
    parser.add_argument("--duration", type=float, help="Run length in seconds for every task")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--jobs", type=int, help="Worker processes for seeds and sweep points")
    parser.add_argument("--twin", type=_switch, metavar="on|off")
    parser.add_argument("--shadow", type=_switch, metavar="on|off")
    parser.add_argument("--direction", type=_switch, metavar="on|off")
    parser.add_argument("--debug", action="store_true", help="Enable debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Spiking three-way network P-controller experiments")
    subparsers = parser.add_subparsers(dest="command", required=True)

    for task, help_text in (
        ("step", "Step response (0.30 -> 0.85 at 5 s)"),
        ("dtp", "Discrete target pursuit"),
        ("sine", "Sinusoidal target pursuit"),
    ):
        task_parser = subparsers.add_parser(task, help=help_text)
        _add_common_arguments(task_parser)
        task_parser.set_defaults(func=command_run, kind=task)

    for kind, help_text in (("sweep-kp", "Sweep the proportional gain"), ("sweep-tau", "Sweep the output trace tau")):
        sweep_parser = subparsers.add_parser(kind, help=help_text)
        _add_common_arguments(sweep_parser)
        sweep_parser.add_argument("--values", type=_float_list_arg, help="Comma-separated sweep values")
        sweep_parser.add_argument("--tasks", nargs="+", choices=TASKS, help="Tasks evaluated at each sweep value")
        sweep_parser.set_defaults(func=command_run, kind=kind)

    mismatch_parser = subparsers.add_parser("mismatch-study", help="Paired on/off arms under device mismatch")
    _add_common_arguments(mismatch_parser)
    mismatch_parser.add_argument("--sigma", type=float, help="Relative mismatch standard deviation")
    mismatch_parser.add_argument("--compare", choices=("twin", "shadow"), help="Feature toggled between the arms")
    mismatch_parser.set_defaults(func=command_run, kind="mismatch-study")

    validate_parser = subparsers.add_parser("validate", help="Build the network and check its topology")
    _add_common_arguments(validate_parser)
    validate_parser.add_argument("--dump", help="Write the topology as JSON to this path")
    validate_parser.set_defaults(func=command_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(debug=args.debug)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
