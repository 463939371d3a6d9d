from __future__ import annotations

from copy import deepcopy
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple
import logging
import tomllib

import toml

from control_loop import DiscreteSequence, LoopConfig, Sinusoid, Step, TargetProfile
from errors import ConfigurationError
from metrics import WINDOW_TOLERANCE
from plant import PlantConfig
from popcode import EncoderConfig
from snn_core import NeuronParams
from threeway import TopologyConfig, WeightTable


CONFIG_ROOT = Path("experiment_configs")
EXPERIMENT_KINDS = ("step", "dtp", "sine", "sweep-kp", "sweep-tau", "mismatch-study")
TASKS = ("step", "dtp", "sine")
DTP_POINTS: Tuple[Tuple[float, float], ...] = ((0.0, 0.30), (10.0, 0.85), (16.0, 0.30))

DEFAULT_DOCUMENT: Dict[str, Any] = {
    "experiment": {"kind": "step", "seeds": [0], "output_dir": "results", "jobs": 1},
    "topology": {
        "n": 16,
        "twin_hidden": True,
        "shadow_inhibition": True,
        "direction_neurons": True,
        "wta_sigma": 1.0,
        "direction_group_size": 1,
        "weights": {},
    },
    "neuron": {},
    "loop": {},
    "plant": {},
    "encoder": {},
    "tasks": {
        "step": {"t_on": 5.0, "a0": 0.30, "a1": 0.85, "duration": 45.0},
        "dtp": {"points": [list(point) for point in DTP_POINTS], "extra_points": [], "duration": 26.0},
        "sine": {"period": 12.0, "center": 0.5, "amplitude": 0.3, "duration": 24.0},
    },
    "metrics": {"rmse_window": 40.0, "band_start": 5.0, "band_length": 10.0, "band_tolerance": 0.05},
    "sweep": {"values": [], "tasks": ["step", "dtp"]},
    "mismatch": {
        "sigma_m": 0.2,
        "compare": "twin",
        "relation_points": [[0.75, 0.25], [0.25, 0.75], [0.5, 0.5], [0.25, 0.25], [0.75, 0.75]],
        "outlier_cell": [4, 11],
        "outlier_gain": 3.0,
        "settle": 1.0,
        "window": 1.0,
    },
}

_SECTION_KEYS = {
    "experiment": {"kind", "seeds", "output_dir", "jobs", "duration"},
    "topology": {"n", "twin_hidden", "shadow_inhibition", "direction_neurons", "wta_sigma", "direction_group_size", "weights"},
    "neuron": {item.name for item in fields(NeuronParams)} - {"is_inhibitory"},
    "loop": {item.name for item in fields(LoopConfig)},
    "plant": {item.name for item in fields(PlantConfig)} | {"initial_position"},
    "encoder": {"rate_max", "sigma"},
    "tasks": set(TASKS),
    "metrics": {"rmse_window", "band_start", "band_length", "band_tolerance"},
    "sweep": {"values", "tasks"},
    "mismatch": {"sigma_m", "compare", "relation_points", "outlier_cell", "outlier_gain", "settle", "window"},
}


def _load_toml(path: Path) -> Dict[str, Any]:
    with path.open("rb") as handle:
        return tomllib.load(handle)


def merge_documents(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_documents(merged[key], value)
        else:
            merged[key] = deepcopy(value)
    return merged


def dtp_profile(extra_points: Optional[List[Tuple[float, float]]] = None) -> DiscreteSequence:
    """Discrete target pursuit: 0.30, then 0.85 at 10 s, back to 0.30 at 16 s."""

    points = list(DTP_POINTS) + [(float(t), float(a)) for t, a in (extra_points or [])]
    return DiscreteSequence(points=tuple(sorted(points, key=lambda point: point[0])))


def _check_keys(data: Dict[str, Any]) -> None:
    for section, values in data.items():
        allowed = _SECTION_KEYS.get(section)
        if allowed is None:
            raise ConfigurationError(f"Unknown configuration section [{section}]")
        unknown = set(values) - allowed
        if unknown:
            raise ConfigurationError(f"Unknown keys in [{section}]: {', '.join(sorted(unknown))}")
    unknown_weights = set(data["topology"].get("weights", {})) - {item.name for item in fields(WeightTable)}
    if unknown_weights:
        raise ConfigurationError(f"Unknown keys in [topology.weights]: {', '.join(sorted(unknown_weights))}")


@dataclass
class ExperimentConfig:
    kind: str
    topology: TopologyConfig
    loop: LoopConfig
    plant: PlantConfig
    encoder: EncoderConfig
    seeds: List[int]
    output_dir: Path
    jobs: int
    data: Dict[str, Any]
    source_path: Optional[Path] = None

    @classmethod
    def from_dict(cls, document: Dict[str, Any], source_path: Optional[Path] = None) -> "ExperimentConfig":
        data = merge_documents(DEFAULT_DOCUMENT, document)
        _check_keys(data)
        experiment = data["experiment"]
        kind = experiment.get("kind")
        if kind not in EXPERIMENT_KINDS:
            raise ConfigurationError(f"Unknown experiment kind '{kind}'; expected one of {EXPERIMENT_KINDS}")

        seeds = [int(seed) for seed in experiment.get("seeds", [])]
        if not seeds:
            raise ConfigurationError("At least one seed is required")
        if any(seed < 0 for seed in seeds):
            raise ConfigurationError("Seeds must be non-negative integers")
        jobs = int(experiment.get("jobs", 1))
        if jobs < 1:
            raise ConfigurationError(f"jobs must be at least 1, got {jobs}")

        try:
            neuron = NeuronParams(**data["neuron"])
            topology_section = dict(data["topology"])
            weights = WeightTable(**topology_section.pop("weights", {}))
            topology = TopologyConfig(weight_table=weights, neuron=neuron, **topology_section)
            loop = LoopConfig(**data["loop"])
            plant_section = {key: value for key, value in data["plant"].items() if key != "initial_position"}
            plant = PlantConfig(**plant_section)
            encoder = EncoderConfig(n=topology.n, **data["encoder"])
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

        config = cls(
            kind=kind,
            topology=topology,
            loop=loop,
            plant=plant,
            encoder=encoder,
            seeds=seeds,
            output_dir=Path(experiment.get("output_dir", "results")),
            jobs=jobs,
            data=data,
            source_path=source_path,
        )
        config._validate_kind()
        return config

    def _validate_kind(self) -> None:
        for task in self.tasks_to_run():
            self.task_profile(task)
            if self.task_duration(task) <= 0:
                raise ConfigurationError(f"Duration of task '{task}' must be positive")
        if self.kind in ("sweep-kp", "sweep-tau") and not self.sweep_values:
            raise ConfigurationError(f"{self.kind} needs a non-empty [sweep] values list")
        if self.kind == "mismatch-study":
            mismatch = self.data["mismatch"]
            if mismatch["compare"] not in ("twin", "shadow"):
                raise ConfigurationError(f"mismatch compare must be 'twin' or 'shadow', got '{mismatch['compare']}'")
            if not 0 <= float(mismatch["sigma_m"]) < 1:
                raise ConfigurationError(f"sigma_m must lie in [0, 1), got {mismatch['sigma_m']}")
            if not mismatch["relation_points"]:
                raise ConfigurationError("mismatch-study needs at least one relation point")
            i, j = self.outlier_cell
            if not (0 <= i < self.topology.n and 0 <= j < self.topology.n):
                raise ConfigurationError(f"Outlier cell {self.outlier_cell} is outside the hidden grid")
        step_task = self.data["tasks"]["step"]
        metrics = self.data["metrics"]
        if "step" in self.tasks_to_run():
            needed = float(step_task["t_on"]) + float(metrics["rmse_window"])
            if self.task_duration("step") < needed - WINDOW_TOLERANCE:
                raise ConfigurationError(
                    f"Step duration {self.task_duration('step')} s does not cover the {metrics['rmse_window']} s "
                    f"RMSE window after onset {step_task['t_on']} s"
                )
            band_end = float(step_task["t_on"]) + float(metrics["band_start"]) + float(metrics["band_length"])
            if self.task_duration("step") < band_end - WINDOW_TOLERANCE:
                raise ConfigurationError(f"Step duration {self.task_duration('step')} s ends before the band window at {band_end} s")

    def tasks_to_run(self) -> List[str]:
        if self.kind in TASKS:
            return [self.kind]
        if self.kind in ("sweep-kp", "sweep-tau"):
            tasks = list(self.data["sweep"]["tasks"])
            unknown = set(tasks) - set(TASKS)
            if unknown or not tasks:
                raise ConfigurationError(f"Sweep tasks must be a non-empty subset of {TASKS}, got {tasks}")
            return tasks
        return []

    def task_profile(self, task: str) -> TargetProfile:
        section = self.data["tasks"][task]
        if task == "step":
            return Step(t_on=float(section["t_on"]), a0=float(section["a0"]), a1=float(section["a1"]))
        if task == "dtp":
            base = [(float(t), float(a)) for t, a in section["points"]]
            extra = [(float(t), float(a)) for t, a in section.get("extra_points", [])]
            if [tuple(point) for point in base] == list(DTP_POINTS):
                return dtp_profile(extra)
            return DiscreteSequence(points=tuple(sorted(base + extra, key=lambda point: point[0])))
        if task == "sine":
            return Sinusoid(
                period=float(section["period"]),
                center=float(section["center"]),
                amplitude=float(section["amplitude"]),
            )
        raise ConfigurationError(f"Unknown task '{task}'")

    def task_duration(self, task: str) -> float:
        override = self.data["experiment"].get("duration")
        return float(override if override is not None else self.data["tasks"][task]["duration"])

    @property
    def initial_position(self) -> Optional[float]:
        value = self.data["plant"].get("initial_position")
        return None if value is None else float(value)

    @property
    def metric_settings(self) -> Dict[str, float]:
        return {key: float(value) for key, value in self.data["metrics"].items()}

    @property
    def sweep_values(self) -> List[float]:
        return [float(value) for value in self.data["sweep"]["values"]]

    @property
    def mismatch(self) -> Dict[str, Any]:
        return self.data["mismatch"]

    @property
    def outlier_cell(self) -> Tuple[int, int]:
        i, j = self.data["mismatch"]["outlier_cell"]
        return int(i), int(j)

    def to_dict(self) -> Dict[str, Any]:
        resolved = deepcopy(self.data)
        resolved["experiment"]["seeds"] = list(self.seeds)
        resolved["experiment"]["output_dir"] = str(self.output_dir)
        resolved["experiment"]["jobs"] = self.jobs
        return resolved

    def dumps(self) -> str:
        return toml.dumps(self.to_dict())


class ConfigRegistry:
    """Published default configurations, one TOML document per experiment kind."""

    def __init__(self, root: Path | None = None):
        self.logger = logging.getLogger(__name__)
        self.root = root or CONFIG_ROOT
        self._cache: Optional[Dict[str, Tuple[Path, Dict[str, Any]]]] = None

    def refresh(self) -> None:
        self._cache = None

    def documents(self) -> Dict[str, Tuple[Path, Dict[str, Any]]]:
        if self._cache is not None:
            return self._cache
        documents: Dict[str, Tuple[Path, Dict[str, Any]]] = {}
        if self.root.exists():
            for path in sorted(self.root.glob("*.toml")):
                document = _load_toml(path)
                kind = document.get("experiment", {}).get("kind")
                if kind in documents:
                    self.logger.warning(f"Duplicate configuration for '{kind}' in {path}; keeping {documents[kind][0]}")
                    continue
                documents[kind] = (path, document)
        self._cache = documents
        return documents

    def kinds(self) -> List[str]:
        return sorted(kind for kind in self.documents() if kind)

    def default_document(self, kind: str) -> Dict[str, Any]:
        if kind not in EXPERIMENT_KINDS:
            raise ConfigurationError(f"Unknown experiment kind '{kind}'")
        entry = self.documents().get(kind)
        document = deepcopy(entry[1]) if entry else {}
        document.setdefault("experiment", {})["kind"] = kind
        return document

    def load(self, kind: str, path: Optional[Path] = None) -> ExperimentConfig:
        if path is None:
            entry = self.documents().get(kind)
            return ExperimentConfig.from_dict(self.default_document(kind), entry[0] if entry else None)
        return ExperimentConfig.from_dict(load_document(path, kind), path)


def load_document(path: Path, kind: Optional[str] = None) -> Dict[str, Any]:
    if not path.is_file():
        raise ConfigurationError(f"Configuration file not found: {path}")
    try:
        document = _load_toml(path)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"Invalid TOML in {path}: {exc}") from exc
    if kind is not None:
        document.setdefault("experiment", {})["kind"] = kind
    return document
