from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union
import logging
import math

import numpy as np
import pandas as pd

from errors import ConfigurationError, TopologyError
from plant import PlantState, plant_step, read_encoder
from popcode import (
    DecodedValue,
    EncoderConfig,
    TraceVector,
    decode_com,
    decode_counts,
    encode_value,
    update_trace_arrays,
    winner_index,
)
from snn_core import NetworkGraph, NetworkSimulator, substream


logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ["t", "target", "encoder", "decoded_error", "expected_error", "command"]
HOLD_POLICIES = ("hold-last", "zero")


@dataclass(frozen=True)
class LoopConfig:
    control_period: float = 20.0
    trace_read_period: float = 60.0
    kp: float = 100.0
    trace_tau: float = 0.5
    settle_hold: str = "hold-last"
    dt: float = 1.0

    def __post_init__(self) -> None:
        if self.control_period <= 0 or self.trace_read_period <= 0:
            raise ConfigurationError("control_period and trace_read_period must be positive")
        if self.dt <= 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.trace_tau <= 0:
            raise ConfigurationError(f"trace_tau must be positive, got {self.trace_tau}")
        if self.settle_hold not in HOLD_POLICIES:
            raise ConfigurationError(f"settle_hold must be one of {HOLD_POLICIES}, got '{self.settle_hold}'")
        for name in ("control_period", "trace_read_period"):
            ratio = getattr(self, name) / self.dt
            if not math.isclose(ratio, round(ratio), abs_tol=1e-9):
                raise ConfigurationError(f"{name} must be a multiple of dt={self.dt} ms")


def _check_position(value: float, label: str) -> None:
    if not 0.0 <= value <= 1.0:
        raise ConfigurationError(f"{label} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class Step:
    t_on: float = 5.0
    a0: float = 0.3
    a1: float = 0.85

    def __post_init__(self) -> None:
        _check_position(self.a0, "a0")
        _check_position(self.a1, "a1")

    def value(self, t: float) -> float:
        return self.a1 if t >= self.t_on else self.a0

    def as_dict(self) -> Dict[str, Any]:
        return {"kind": "step", "t_on": self.t_on, "a0": self.a0, "a1": self.a1}


@dataclass(frozen=True)
class DiscreteSequence:
    points: Tuple[Tuple[float, float], ...]

    def __post_init__(self) -> None:
        if not self.points:
            raise ConfigurationError("A discrete sequence needs at least one (t, a) point")
        times = [t for t, _ in self.points]
        if times != sorted(times):
            raise ConfigurationError("Discrete sequence points must be sorted by time")
        for t, a in self.points:
            _check_position(a, f"target at t={t}")

    def value(self, t: float) -> float:
        index = bisect_right([time for time, _ in self.points], t) - 1
        return self.points[max(index, 0)][1]

    def as_dict(self) -> Dict[str, Any]:
        return {"kind": "sequence", "points": [list(point) for point in self.points]}


@dataclass(frozen=True)
class Sinusoid:
    period: float = 12.0
    center: float = 0.5
    amplitude: float = 0.3
    phase: float = 0.0

    def __post_init__(self) -> None:
        if self.period <= 0:
            raise ConfigurationError(f"Sinusoid period must be positive, got {self.period}")
        _check_position(self.center - abs(self.amplitude), "sinusoid minimum")
        _check_position(self.center + abs(self.amplitude), "sinusoid maximum")

    def value(self, t: float) -> float:
        return self.center + self.amplitude * math.sin(2.0 * math.pi * t / self.period + self.phase)

    def as_dict(self) -> Dict[str, Any]:
        return {
            "kind": "sine",
            "period": self.period,
            "center": self.center,
            "amplitude": self.amplitude,
            "phase": self.phase,
        }


TargetProfile = Union[Step, DiscreteSequence, Sinusoid]


def profile_from_dict(data: Dict[str, Any]) -> TargetProfile:
    kind = data.get("kind", "step")
    if kind == "step":
        return Step(t_on=float(data.get("t_on", 5.0)), a0=float(data.get("a0", 0.3)), a1=float(data.get("a1", 0.85)))
    if kind == "sequence":
        return DiscreteSequence(points=tuple((float(t), float(a)) for t, a in data.get("points", [])))
    if kind == "sine":
        return Sinusoid(
            period=float(data.get("period", 12.0)),
            center=float(data.get("center", 0.5)),
            amplitude=float(data.get("amplitude", 0.3)),
            phase=float(data.get("phase", 0.0)),
        )
    raise ConfigurationError(f"Unknown target profile kind '{kind}'")


@dataclass
class Trajectory:
    """Control-period samples plus the raw spike record of one run.

    ``samples`` holds TRAJECTORY_COLUMNS and a ``winner`` column (argmax of the
    output trace, -1 before the first decode). ``decoded_error`` is NaN until the
    network has produced an output spike.
    """

    samples: pd.DataFrame
    spike_times: np.ndarray
    spike_neurons: np.ndarray
    neuron_labels: np.ndarray
    duration: float
    control_period: float
    seed: int = 0

    def spike_table(self) -> pd.DataFrame:
        return pd.DataFrame({
            "t_ms": self.spike_times,
            "population": self.neuron_labels[self.spike_neurons],
            "neuron_id": self.spike_neurons,
        })

    def column(self, name: str) -> np.ndarray:
        return self.samples[name].to_numpy()


def compute_command(c: float, kp: float) -> float:
    return kp * c


def _source_indices(graph: NetworkGraph, ids: range) -> np.ndarray:
    return np.array([index for index, source in enumerate(graph.sources) if source.target in ids], dtype=np.int64)


def _steps(period_ms: float, dt: float) -> int:
    return max(1, int(round(period_ms / dt)))


def run_closed_loop(
    graph: NetworkGraph,
    plant: PlantState,
    profile: TargetProfile,
    loop_cfg: LoopConfig,
    duration: float,
    seed: int,
    encoder: Optional[EncoderConfig] = None,
    record_spikes: bool = True,
) -> Trajectory:
    """Run the P loop for ``duration`` seconds.

    Commands are issued every control period from the latest decode; the
    output trace is decoded every trace-read period.
    """

    if duration <= 0:
        raise ConfigurationError(f"duration must be positive, got {duration}")
    layout = graph.attributes.get("layout")
    if layout is None:
        raise TopologyError("Closed loop needs a graph built by build_threeway")
    encoder = encoder or EncoderConfig(n=layout.n)
    if encoder.n != layout.n:
        raise ConfigurationError(f"Encoder size {encoder.n} does not match network n={layout.n}")

    dt = loop_cfg.dt
    simulator = NetworkSimulator(graph, dt=dt, seed=seed)
    encoder_rng = substream(seed, "encoder")
    a_sources = _source_indices(graph, layout.a)
    b_sources = _source_indices(graph, layout.b)
    c_start, c_stop = layout.c.start, layout.c.stop

    control_every = _steps(loop_cfg.control_period, dt)
    read_every = _steps(loop_cfg.trace_read_period, dt)
    total_steps = int(round(duration * 1000.0 / dt))

    trace = TraceVector.zeros(len(layout.c), loop_cfg.trace_tau, first_neuron=c_start)
    decoded_c = math.nan
    command = 0.0
    winner = -1
    rows: List[Tuple[float, ...]] = []
    spike_steps: List[np.ndarray] = []
    spike_ids: List[np.ndarray] = []
    window_times: List[np.ndarray] = []
    window_ids: List[np.ndarray] = []

    logger.info(f"Closed loop: {duration} s, Kp={loop_cfg.kp}, tau={loop_cfg.trace_tau} s, seed={seed}")
    for step in range(total_steps):
        t_ms = step * dt
        if step % control_every == 0:
            target = profile.value(t_ms / 1000.0)
            reading = read_encoder(plant, plant.config, encoder_rng)
            simulator.set_source_rates(a_sources, encode_value(target, encoder).rates)
            simulator.set_source_rates(b_sources, encode_value(reading, encoder).rates)
            if not math.isnan(decoded_c):
                command = compute_command(decoded_c, loop_cfg.kp)
            rows.append((t_ms / 1000.0, target, reading, decoded_c, target - reading, command, winner))

        fired = simulator.advance()
        if fired.size:
            if record_spikes:
                spike_steps.append(np.full(fired.size, step, dtype=np.int64))
                spike_ids.append(fired)
            output = fired[(fired >= c_start) & (fired < c_stop)]
            if output.size:
                window_times.append(np.full(output.size, t_ms / 1000.0))
                window_ids.append(output)

        plant_step(plant, command, dt)

        if (step + 1) % read_every == 0:
            times = np.concatenate(window_times) if window_times else np.zeros(0)
            ids = np.concatenate(window_ids) if window_ids else np.zeros(0, dtype=np.int64)
            window_times.clear()
            window_ids.clear()
            trace = update_trace_arrays(trace, times, ids, t_ms / 1000.0)
            decoded = decode_com(trace, layout.n)
            if decoded.defined:
                decoded_c = decoded.c
                winner = winner_index(trace.values)
            elif loop_cfg.settle_hold == "zero":
                decoded_c = 0.0

    samples = pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS + ["winner"])
    samples["winner"] = samples["winner"].astype(int)
    steps = np.concatenate(spike_steps) if spike_steps else np.zeros(0, dtype=np.int64)
    return Trajectory(
        samples=samples,
        spike_times=steps * dt,
        spike_neurons=np.concatenate(spike_ids) if spike_ids else np.zeros(0, dtype=np.int64),
        neuron_labels=graph.neuron_labels(),
        duration=duration,
        control_period=loop_cfg.control_period,
        seed=seed,
    )


@dataclass
class RelationReading:
    a: float
    b: float
    decoded: DecodedValue
    counts: np.ndarray = field(repr=False)

    @property
    def expected(self) -> float:
        return self.a - self.b

    @property
    def error(self) -> float:
        if not self.decoded.defined:
            return math.inf
        return abs(self.decoded.c - self.expected)


def measure_relation(
    graph: NetworkGraph,
    a: float,
    b: float,
    settle: float = 1.0,
    window: float = 1.0,
    seed: int = 0,
    dt: float = 1.0,
    encoder: Optional[EncoderConfig] = None,
) -> RelationReading:
    """Open-loop reading: hold A at ``a`` and B at ``b`` and decode C spike counts over the final window."""

    layout = graph.attributes.get("layout")
    if layout is None:
        raise TopologyError("Relation reading needs a graph built by build_threeway")
    encoder = encoder or EncoderConfig(n=layout.n)
    simulator = NetworkSimulator(graph, dt=dt, seed=seed)
    simulator.set_source_rates(_source_indices(graph, layout.a), encode_value(a, encoder).rates)
    simulator.set_source_rates(_source_indices(graph, layout.b), encode_value(b, encoder).rates)

    settle_steps = int(round(settle * 1000.0 / dt))
    window_steps = int(round(window * 1000.0 / dt))
    counts = np.zeros(len(layout.c))
    for step in range(settle_steps + window_steps):
        fired = simulator.advance()
        if step >= settle_steps and fired.size:
            output = fired[(fired >= layout.c.start) & (fired < layout.c.stop)] - layout.c.start
            counts += np.bincount(output, minlength=len(layout.c))
    return RelationReading(a=a, b=b, decoded=decode_counts(counts, layout.n), counts=counts)
