from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence
import json
import logging
import statistics

import numpy as np
import pandas as pd

from control_loop import (
    TRAJECTORY_COLUMNS,
    DiscreteSequence,
    Sinusoid,
    Step,
    TargetProfile,
    Trajectory,
    measure_relation,
    run_closed_loop,
)
from errors import ConfigurationError, TopologyError
from excel_report import write_metrics_workbook
from experiment_config import TASKS, ExperimentConfig
from metrics import (
    Metrics,
    aggregate_metrics,
    band_fraction,
    overshoot,
    rise_time,
    rmse,
    sign_agreement,
    winner_peak,
)
from plant import PlantState
from plot_script import write_plot_script
from snn_core import NetworkGraph, apply_mismatch, substream
from threeway import TopologyConfig, build_network, inject_outlier
from utils import ensure_output_dir, json_safe


logger = logging.getLogger(__name__)

TRAJECTORY_FILE = "trajectory.csv"
SPIKES_FILE = "spikes.csv"
METRICS_FILE = "metrics.json"
CONFIG_FILE = "config.toml"
WORKBOOK_FILE = "metrics.xlsx"
SWEEP_FILE = "sweep.csv"
RELATION_FILE = "relation_errors.csv"

@lru_cache(maxsize=4)
def _cached_network(topology: TopologyConfig) -> NetworkGraph:
    return build_network(topology)


def build_graph(topology: TopologyConfig, sigma_m: float = 0.0, seed: int = 0) -> NetworkGraph:
    """Build the network, jittered with the seed's mismatch substream when sigma_m > 0."""

    graph = _cached_network(topology)
    if sigma_m > 0:
        return apply_mismatch(graph, sigma_m, substream(seed, "mismatch"))
    return graph


def write_trajectory_csv(traj: Trajectory, path: Path) -> Path:
    traj.samples[TRAJECTORY_COLUMNS].to_csv(path, index=False)
    return path


def write_spikes_csv(traj: Trajectory, path: Path) -> Path:
    traj.spike_table().to_csv(path, index=False)
    return path


def evaluate_task(task: str, traj: Trajectory, profile: TargetProfile, settings: Dict[str, float], seed: int) -> Metrics:
    if task == "step" and isinstance(profile, Step):
        onset = profile.t_on
        return Metrics(
            seed=seed,
            rmse=rmse(traj, onset, settings["rmse_window"]),
            rise_time=rise_time(traj, onset, profile.a0, profile.a1),
            overshoot=overshoot(traj, onset, profile.a0, profile.a1),
            band_fraction=band_fraction(
                traj, onset + settings["band_start"], settings["band_length"], settings["band_tolerance"]
            ),
            sign_agreement=sign_agreement(traj),
        )
    if task == "dtp" and isinstance(profile, DiscreteSequence):
        peak = None
        if len(profile.points) > 1:
            start = profile.points[1][0]
            end = profile.points[2][0] if len(profile.points) > 2 else traj.duration
            if start < traj.duration:
                peak = winner_peak(traj, start, min(end, traj.duration) - start)
        return Metrics(
            seed=seed,
            rmse=rmse(traj, 0.0, traj.duration),
            sign_agreement=sign_agreement(traj),
            winner_peak=peak,
        )
    if task == "sine" and isinstance(profile, Sinusoid):
        return Metrics(seed=seed, rmse=rmse(traj, 0.0, traj.duration), sign_agreement=sign_agreement(traj))
    raise ConfigurationError(f"Task '{task}' does not match profile {profile}")


@dataclass(frozen=True)
class TaskJob:
    task: str
    seed: int
    config: ExperimentConfig
    output_dir: Path
    kp: float
    trace_tau: float
    label: str = ""


def run_task(job: TaskJob) -> Dict[str, Any]:
    """Run one closed-loop task for one seed and write its CSVs. Never raises."""

    record: Dict[str, Any] = {
        "task": job.task,
        "seed": job.seed,
        "kp": job.kp,
        "trace_tau": job.trace_tau,
        "label": job.label,
        "success": False,
        "error": None,
    }
    try:
        cfg = job.config
        profile = cfg.task_profile(job.task)
        duration = cfg.task_duration(job.task)
        loop = replace(cfg.loop, kp=job.kp, trace_tau=job.trace_tau)
        position = cfg.initial_position if cfg.initial_position is not None else profile.value(0.0)
        plant = PlantState.at_position(cfg.plant, position)
        graph = build_graph(cfg.topology)

        logger.info(f"Starting {job.task} seed={job.seed} Kp={job.kp} tau={job.trace_tau} -> {job.output_dir}")
        traj = run_closed_loop(graph, plant, profile, loop, duration, job.seed, cfg.encoder)
        job.output_dir.mkdir(parents=True, exist_ok=True)
        trajectory_path = write_trajectory_csv(traj, job.output_dir / TRAJECTORY_FILE)
        spikes_path = write_spikes_csv(traj, job.output_dir / SPIKES_FILE)
        metrics = evaluate_task(job.task, traj, profile, cfg.metric_settings, job.seed)
        record.update({
            "success": True,
            "metrics": metrics.as_dict(),
            "trajectory": str(trajectory_path),
            "spikes": str(spikes_path),
            "spike_count": int(traj.spike_neurons.size),
        })
        logger.info(f"Finished {job.task} seed={job.seed}: rmse={metrics.rmse:.4f}")
    except (ValueError, OSError) as exc:
        logger.error(f"{job.task} seed={job.seed} failed: {exc}")
        record["error"] = str(exc)
    return record


def _execute(function: Callable[[Any], Dict[str, Any]], jobs: Sequence[Any], workers: int) -> List[Dict[str, Any]]:
    """Run jobs in submission order, in-process or across a process pool."""

    if workers <= 1 or len(jobs) <= 1:
        return [function(job) for job in jobs]
    results: List[Optional[Dict[str, Any]]] = [None] * len(jobs)
    with ProcessPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(function, job): index for index, job in enumerate(jobs)}
        for future in as_completed(futures):
            results[futures[future]] = future.result()
    return [result for result in results if result is not None]


def _summaries(records: List[Dict[str, Any]], keys: Sequence[str]) -> List[Dict[str, Any]]:
    """Aggregate successful records grouped by ``keys`` (first-seen order)."""

    groups: Dict[tuple, List[Metrics]] = {}
    for record in records:
        if not record["success"]:
            continue
        group = tuple(record[key] for key in keys)
        groups.setdefault(group, []).append(Metrics(**record["metrics"]))
    return [
        {**dict(zip(keys, group)), "runs": len(runs), "aggregate": aggregate_metrics(runs)}
        for group, runs in groups.items()
    ]


def _run_tasks(cfg: ExperimentConfig) -> Dict[str, Any]:
    jobs = [
        TaskJob(
            task=cfg.kind,
            seed=seed,
            config=cfg,
            output_dir=cfg.output_dir / f"seed_{seed}",
            kp=cfg.loop.kp,
            trace_tau=cfg.loop.trace_tau,
        )
        for seed in cfg.seeds
    ]
    records = _execute(run_task, jobs, cfg.jobs)
    return {"runs": records, "summary": _summaries(records, ["task"])}


def _format_value(value: float) -> str:
    return f"{value:g}"


def _run_sweep(cfg: ExperimentConfig, parameter: str) -> Dict[str, Any]:
    jobs: List[TaskJob] = []
    for value in cfg.sweep_values:
        kp = value if parameter == "kp" else cfg.loop.kp
        trace_tau = value if parameter == "trace_tau" else cfg.loop.trace_tau
        for task in cfg.tasks_to_run():
            for seed in cfg.seeds:
                label = f"{parameter}_{_format_value(value)}"
                jobs.append(TaskJob(
                    task=task,
                    seed=seed,
                    config=cfg,
                    output_dir=cfg.output_dir / label / task / f"seed_{seed}",
                    kp=kp,
                    trace_tau=trace_tau,
                    label=label,
                ))
    records = _execute(run_task, jobs, cfg.jobs)
    summary = _summaries(records, [parameter, "task"])
    table = pd.DataFrame([
        {
            parameter: entry[parameter],
            "task": entry["task"],
            "runs": entry["runs"],
            **{
                f"{name}_{statistic}": values[statistic]
                for name, values in entry["aggregate"].items()
                for statistic in ("mean", "std")
            },
        }
        for entry in summary
    ])
    table.to_csv(cfg.output_dir / SWEEP_FILE, index=False)
    return {"parameter": parameter, "runs": records, "summary": summary}


@dataclass(frozen=True)
class RelationJob:
    arm: str
    seed: int
    config: ExperimentConfig
    topology: TopologyConfig
    inject: bool


def run_relation_arm(job: RelationJob) -> Dict[str, Any]:
    """Measure every relation point on one mismatched network. Never raises."""

    cfg = job.config
    mismatch = cfg.mismatch
    record: Dict[str, Any] = {"arm": job.arm, "seed": job.seed, "success": False, "error": None, "points": []}
    try:
        graph = build_graph(job.topology, float(mismatch["sigma_m"]), job.seed)
        if job.inject:
            graph = inject_outlier(graph, cfg.outlier_cell, float(mismatch["outlier_gain"]))
        for a, b in mismatch["relation_points"]:
            reading = measure_relation(
                graph,
                float(a),
                float(b),
                settle=float(mismatch["settle"]),
                window=float(mismatch["window"]),
                seed=job.seed,
                dt=cfg.loop.dt,
                encoder=cfg.encoder,
            )
            record["points"].append({
                "a": reading.a,
                "b": reading.b,
                "decoded": reading.decoded.c,
                "error": reading.error,
            })
        record["mean_error"] = float(np.mean([point["error"] for point in record["points"]]))
        record["success"] = True
        logger.info(f"Mismatch arm {job.arm} seed={job.seed}: mean error {record['mean_error']:.4f}")
    except ValueError as exc:
        logger.error(f"Mismatch arm {job.arm} seed={job.seed} failed: {exc}")
        record["error"] = str(exc)
    return record


def _run_mismatch_study(cfg: ExperimentConfig) -> Dict[str, Any]:
    compare = cfg.mismatch["compare"]
    flag = "twin_hidden" if compare == "twin" else "shadow_inhibition"
    jobs = [
        RelationJob(
            arm=arm,
            seed=seed,
            config=cfg,
            topology=replace(cfg.topology, **{flag: arm == "on"}),
            inject=compare == "shadow",
        )
        for seed in cfg.seeds
        for arm in ("on", "off")
    ]
    records = _execute(run_relation_arm, jobs, cfg.jobs)

    rows = [
        {"arm": record["arm"], "seed": record["seed"], **point}
        for record in records
        if record["success"]
        for point in record["points"]
    ]
    pd.DataFrame(rows, columns=["arm", "seed", "a", "b", "decoded", "error"]).to_csv(
        cfg.output_dir / RELATION_FILE, index=False
    )

    arms: Dict[str, Dict[str, Any]] = {}
    for arm in ("on", "off"):
        errors = [record["mean_error"] for record in records if record["arm"] == arm and record["success"]]
        arms[arm] = {
            "seeds": len(errors),
            "median_error": statistics.median(errors) if errors else None,
            "per_seed": errors,
        }
    on, off = arms["on"]["median_error"], arms["off"]["median_error"]
    return {
        "compare": compare,
        "sigma_m": float(cfg.mismatch["sigma_m"]),
        "runs": records,
        "arms": arms,
        "on_not_worse": None if on is None or off is None else on <= off,
    }


def _workbook_rows(kind: str, payload: Dict[str, Any]) -> Dict[str, List[Dict[str, Any]]]:
    if kind == "mismatch-study":
        runs = [
            {"arm": record["arm"], "seed": record["seed"], "mean_error": record.get("mean_error"), "error": record["error"]}
            for record in payload["runs"]
        ]
        aggregate = [
            {"arm": arm, "seeds": values["seeds"], "median_error": values["median_error"]}
            for arm, values in payload["arms"].items()
        ]
        return {"runs": runs, "aggregate": aggregate}

    runs = [
        {
            "task": record["task"],
            "seed": record["seed"],
            "kp": record["kp"],
            "trace_tau": record["trace_tau"],
            **(record.get("metrics") or {}),
            "error": record["error"],
        }
        for record in payload["runs"]
    ]
    aggregate = []
    for entry in payload["summary"]:
        keys = {key: value for key, value in entry.items() if key not in ("aggregate",)}
        for name, values in entry["aggregate"].items():
            aggregate.append({**keys, "metric": name, **values})
    return {"runs": runs, "aggregate": aggregate}


def run_experiment(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Run one configured experiment and write its artifacts under ``cfg.output_dir``."""

    result: Dict[str, Any] = {
        "success": False,
        "error": None,
        "kind": cfg.kind,
        "output_dir": str(cfg.output_dir),
        "metrics": None,
        "files": [],
    }
    try:
        ensure_output_dir(cfg.output_dir)
    except OSError as exc:
        result["error"] = f"Output directory not writable: {cfg.output_dir} ({exc})"
        logger.error(result["error"])
        return result

    logger.info(f"Running {cfg.kind} with seeds {cfg.seeds} into {cfg.output_dir}")
    try:
        if cfg.kind in TASKS:
            payload = _run_tasks(cfg)
        elif cfg.kind == "sweep-kp":
            payload = _run_sweep(cfg, "kp")
        elif cfg.kind == "sweep-tau":
            payload = _run_sweep(cfg, "trace_tau")
        else:
            payload = _run_mismatch_study(cfg)
    except (ConfigurationError, TopologyError, OSError) as exc:
        result["error"] = str(exc)
        logger.error(f"{cfg.kind} failed: {exc}")
        return result

    failures = [record for record in payload["runs"] if not record["success"]]
    document = {"kind": cfg.kind, "config": cfg.to_dict(), **payload, "failures": len(failures)}

    output_dir = cfg.output_dir
    config_path = output_dir / CONFIG_FILE
    config_path.write_text(cfg.dumps(), encoding="utf-8")
    metrics_path = output_dir / METRICS_FILE
    metrics_path.write_text(json.dumps(json_safe(document), indent=2), encoding="utf-8")
    workbook_path = write_metrics_workbook(
        output_dir / WORKBOOK_FILE,
        {"kind": cfg.kind, "seeds": len(cfg.seeds), "runs": len(payload["runs"]), "failures": len(failures)},
        **_workbook_rows(cfg.kind, payload),
    )
    plot_path = write_plot_script(output_dir, cfg.kind)

    result["files"] = [str(path) for path in (config_path, metrics_path, workbook_path, plot_path)]
    result["metrics"] = json_safe(payload.get("summary") or payload.get("arms"))
    result["success"] = not failures
    if failures:
        result["error"] = f"{len(failures)} of {len(payload['runs'])} runs failed"
    logger.info(f"{cfg.kind} finished: {len(payload['runs']) - len(failures)} of {len(payload['runs'])} runs succeeded")
    return result
