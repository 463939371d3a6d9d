from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any, Callable, Dict, List, Optional, Sequence
import logging
import math
import zlib

import numpy as np
from scipy import sparse

from errors import ConfigurationError, SimulationError, TopologyError


logger = logging.getLogger(__name__)

# Lower bound on any multiplicative mismatch factor; keeps time constants positive
# when 1 - 3 * sigma would reach zero.
MIN_MISMATCH_FACTOR = 0.01


@dataclass(frozen=True)
class NeuronParams:
    tau_mem: float = 20.0
    v_thresh: float = 1.0
    v_reset: float = 0.0
    refractory: float = 2.0
    tau_syn_exc: float = 5.0
    tau_syn_inh: float = 5.0
    is_inhibitory: bool = False

    def __post_init__(self) -> None:
        if self.tau_mem <= 0:
            raise ConfigurationError(f"tau_mem must be positive, got {self.tau_mem}")
        if self.tau_syn_exc <= 0 or self.tau_syn_inh <= 0:
            raise ConfigurationError(
                f"Synaptic time constants must be positive, got {self.tau_syn_exc}/{self.tau_syn_inh}"
            )
        if not self.v_thresh > self.v_reset:
            raise ConfigurationError(f"v_thresh ({self.v_thresh}) must exceed v_reset ({self.v_reset})")
        if self.refractory < 0:
            raise ConfigurationError(f"refractory must be non-negative, got {self.refractory}")

    def as_inhibitory(self) -> "NeuronParams":
        return replace(self, is_inhibitory=True)


@dataclass
class NeuronState:
    v: float
    i_exc: float
    i_inh: float
    refractory_until: float
    last_spike: Optional[float]


@dataclass(frozen=True)
class Synapse:
    pre: int
    post: int
    weight: float
    role: str = ""


@dataclass(frozen=True, order=True)
class SpikeEvent:
    t: float
    neuron: int


@dataclass(frozen=True)
class PoissonSource:
    rate: float
    target: int
    weight: float

    def __post_init__(self) -> None:
        if self.rate < 0:
            raise ConfigurationError(f"Poisson rate must be non-negative, got {self.rate}")


SpikeSink = Callable[[SpikeEvent], None]


def sign_consistent(synapse: Synapse, neurons: Sequence[NeuronParams]) -> bool:
    if neurons[synapse.pre].is_inhibitory:
        return synapse.weight <= 0
    return synapse.weight >= 0


@dataclass
class NetworkGraph:
    """Neurons, role-tagged synapses and Poisson sources.

    Neuron ids are list positions. ``populations`` maps a population name to its
    contiguous id range; ``attributes`` carries builder metadata (layout, topology
    config) that validators and the control loop read back.
    """

    neurons: List[NeuronParams] = field(default_factory=list)
    synapses: List[Synapse] = field(default_factory=list)
    sources: List[PoissonSource] = field(default_factory=list)
    populations: Dict[str, range] = field(default_factory=dict)
    attributes: Dict[str, Any] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.neurons)

    def add_population(self, name: str, count: int, params: NeuronParams) -> range:
        if name in self.populations:
            raise TopologyError(f"Population '{name}' already exists")
        start = len(self.neurons)
        self.neurons.extend([params] * count)
        ids = range(start, start + count)
        self.populations[name] = ids
        return ids

    def connect(self, pre: int, post: int, weight: float, role: str) -> Synapse:
        """Add a synapse whose sign follows the presynaptic neuron type."""

        magnitude = abs(weight)
        signed = -magnitude if self.neurons[pre].is_inhibitory else magnitude
        synapse = Synapse(pre=pre, post=post, weight=signed, role=role)
        self.synapses.append(synapse)
        return synapse

    def add_source(self, target: int, weight: float, rate: float = 0.0) -> int:
        self.sources.append(PoissonSource(rate=rate, target=target, weight=weight))
        return len(self.sources) - 1

    def population_of(self, neuron: int) -> Optional[str]:
        for name, ids in self.populations.items():
            if neuron in ids:
                return name
        return None

    def neuron_labels(self) -> np.ndarray:
        labels = np.full(self.size, "", dtype=object)
        for name, ids in self.populations.items():
            labels[ids.start:ids.stop] = name
        return labels

    def synapses_with_role(self, role: str) -> List[Synapse]:
        return [synapse for synapse in self.synapses if synapse.role == role]

    def copy(self) -> "NetworkGraph":
        return NetworkGraph(
            neurons=list(self.neurons),
            synapses=list(self.synapses),
            sources=list(self.sources),
            populations=dict(self.populations),
            attributes=dict(self.attributes),
        )

    def validate(self) -> None:
        size = self.size
        for synapse in self.synapses:
            if not (0 <= synapse.pre < size and 0 <= synapse.post < size):
                raise TopologyError(f"Synapse {synapse} references an unknown neuron (network size {size})")
            if not sign_consistent(synapse, self.neurons):
                raise TopologyError(f"Synapse {synapse} has a weight sign inconsistent with its presynaptic neuron")
        for index, source in enumerate(self.sources):
            if not 0 <= source.target < size:
                raise TopologyError(f"Poisson source {index} targets unknown neuron {source.target}")


def _key_entropy(part: Any) -> int:
    if isinstance(part, (int, np.integer)) and part >= 0:
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def substream(seed: int, *key: Any) -> np.random.Generator:
    """Counter-based generator for one named consumer of a master seed.

    The same (seed, key) always yields the same stream, and new keys never shift
    the draws of existing ones.
    """

    entropy = [_key_entropy(seed), *(_key_entropy(part) for part in key)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@lru_cache(maxsize=None)
def decay_factor(dt: float, tau: float) -> float:
    return math.exp(-dt / tau)


def spike_probability(rate: float, dt: float) -> float:
    probability = rate * dt / 1000.0
    if probability > 1.0:
        raise ConfigurationError(
            f"Poisson rate {rate} Hz with dt={dt} ms gives p={probability:.3f} > 1; reduce dt or the rate"
        )
    return probability


def poisson_tick(source: PoissonSource, dt: float, rng: np.random.Generator) -> bool:
    """One Bernoulli draw of a Poisson source for a step of ``dt`` milliseconds."""

    probability = spike_probability(source.rate, dt)
    return bool(rng.random() < probability)


class PoissonBank:
    """Vectorized ``poisson_tick`` over many sources, one substream per source."""

    def __init__(self, sources: Sequence[PoissonSource], dt: float, seed: int, block: int = 1024):
        self.dt = dt
        self.targets = np.array([source.target for source in sources], dtype=np.int64)
        self.weights = np.array([source.weight for source in sources], dtype=float)
        self.probabilities = np.array([spike_probability(source.rate, dt) for source in sources], dtype=float)
        self._generators = [substream(seed, "poisson", index) for index in range(len(sources))]
        self._block = block
        self._buffer = np.empty((len(sources), block))
        self._cursor = block

    def __len__(self) -> int:
        return len(self._generators)

    def set_rates(self, indices: Sequence[int], rates: Sequence[float]) -> None:
        rates = np.asarray(rates, dtype=float)
        if np.any(rates < 0):
            raise ConfigurationError("Poisson rates must be non-negative")
        probabilities = rates * self.dt / 1000.0
        if np.any(probabilities > 1.0):
            raise ConfigurationError(f"Poisson rates {rates.max()} Hz exceed one spike per {self.dt} ms step")
        self.probabilities[np.asarray(indices, dtype=np.int64)] = probabilities

    def draw(self) -> np.ndarray:
        if not self._generators:
            return np.zeros(0, dtype=bool)
        if self._cursor >= self._block:
            for row, generator in enumerate(self._generators):
                self._buffer[row] = generator.random(self._block)
            self._cursor = 0
        uniforms = self._buffer[:, self._cursor]
        self._cursor += 1
        return uniforms < self.probabilities


class NetworkSimulator:
    """Fixed-step current-based LIF engine.

    Per step: synaptic currents decay, spikes of the previous step arrive,
    the membrane integrates, refractory neurons are clamped and threshold
    crossings fire. A spike of weight ``w`` adds ``w / tau_syn`` of current to
    its target one step after it is emitted.
    """

    def __init__(self, graph: NetworkGraph, dt: float = 1.0, seed: int = 0, sink: Optional[SpikeSink] = None):
        if dt <= 0:
            raise ConfigurationError(f"dt must be positive, got {dt}")
        graph.validate()
        self.graph = graph
        self.dt = float(dt)
        self.seed = seed
        self.sink = sink

        neurons = graph.neurons
        self._alpha = np.array([decay_factor(self.dt, params.tau_mem) for params in neurons])
        self._exc_decay = np.array([decay_factor(self.dt, params.tau_syn_exc) for params in neurons])
        self._inh_decay = np.array([decay_factor(self.dt, params.tau_syn_inh) for params in neurons])
        self._v_thresh = np.array([params.v_thresh for params in neurons], dtype=float)
        self._v_reset = np.array([params.v_reset for params in neurons], dtype=float)
        self._refractory_steps = np.array(
            [int(round(params.refractory / self.dt)) for params in neurons], dtype=np.int64
        )
        self._w_exc, self._w_inh = self._compile_weights()
        self._bias = np.zeros(graph.size)
        self.reset()
        logger.debug(
            f"Compiled network: {graph.size} neurons, {len(graph.synapses)} synapses, "
            f"{len(graph.sources)} sources, dt={self.dt} ms"
        )

    def _compile_weights(self):
        size = self.graph.size
        pre = np.array([synapse.pre for synapse in self.graph.synapses], dtype=np.int64)
        post = np.array([synapse.post for synapse in self.graph.synapses], dtype=np.int64)
        weight = np.array([synapse.weight for synapse in self.graph.synapses], dtype=float)
        tau_exc = np.array([params.tau_syn_exc for params in self.graph.neurons], dtype=float)
        tau_inh = np.array([params.tau_syn_inh for params in self.graph.neurons], dtype=float)

        excitatory = weight > 0
        inhibitory = weight < 0
        w_exc = sparse.csr_matrix(
            (weight[excitatory] / tau_exc[post[excitatory]], (post[excitatory], pre[excitatory])),
            shape=(size, size),
        )
        w_inh = sparse.csr_matrix(
            (weight[inhibitory] / tau_inh[post[inhibitory]], (post[inhibitory], pre[inhibitory])),
            shape=(size, size),
        )
        return w_exc, w_inh

    def reset(self) -> None:
        size = self.graph.size
        self._v = self._v_reset.copy()
        self._i_exc = np.zeros(size)
        self._i_inh = np.zeros(size)
        self._refractory_until = np.full(size, -1, dtype=np.int64)
        self._last_spike = np.full(size, -1, dtype=np.int64)
        self._pending = np.zeros(size)
        self._pending_any = False
        self._pending_input = np.zeros(size)
        self._step = 0
        self.poisson = PoissonBank(self.graph.sources, self.dt, self.seed)
        tau_exc = np.array([params.tau_syn_exc for params in self.graph.neurons], dtype=float)
        self._source_charge = self.poisson.weights / tau_exc[self.poisson.targets] if len(self.poisson) else np.zeros(0)

    @property
    def time(self) -> float:
        """Time (ms) of the next step to be simulated."""

        return self._step * self.dt

    @property
    def step_index(self) -> int:
        return self._step

    def set_bias(self, neurons: Sequence[int], current: float) -> None:
        self._bias[np.asarray(neurons, dtype=np.int64)] = current

    def set_potential(self, neurons: Sequence[int], v: float) -> None:
        self._v[np.asarray(neurons, dtype=np.int64)] = v

    def set_source_rates(self, indices: Sequence[int], rates: Sequence[float]) -> None:
        self.poisson.set_rates(indices, rates)

    def state(self, neuron: int) -> NeuronState:
        last = int(self._last_spike[neuron])
        return NeuronState(
            v=float(self._v[neuron]),
            i_exc=float(self._i_exc[neuron]),
            i_inh=float(self._i_inh[neuron]),
            refractory_until=float(self._refractory_until[neuron] * self.dt),
            last_spike=None if last < 0 else last * self.dt,
        )

    def advance(self, external: Optional[np.ndarray] = None) -> np.ndarray:
        """Simulate one step and return the ids that fired during it.

        ``external`` lists neuron ids treated as having fired at this step; like
        recurrent spikes they reach their targets on the next step.
        """

        step = self._step
        size = self.graph.size

        self._i_exc *= self._exc_decay
        self._i_inh *= self._inh_decay
        if self._pending_any:
            self._i_exc += self._w_exc @ self._pending
            self._i_inh += self._w_inh @ self._pending
        self._i_exc += self._pending_input

        self._v = self._alpha * self._v + self.dt * (self._i_exc + self._i_inh + self._bias)
        clamped = self._refractory_until >= step
        self._v[clamped] = self._v_reset[clamped]

        fired = np.flatnonzero(self._v >= self._v_thresh)
        if fired.size:
            self._v[fired] = self._v_reset[fired]
            self._refractory_until[fired] = step + self._refractory_steps[fired]
            self._last_spike[fired] = step

        pending = np.bincount(fired, minlength=size).astype(float)
        if external is not None and len(external):
            pending += np.bincount(np.asarray(external, dtype=np.int64), minlength=size)
        self._pending = pending
        self._pending_any = bool(fired.size) or (external is not None and len(external) > 0)

        if len(self.poisson):
            emitted = self.poisson.draw()
            self._pending_input = np.bincount(
                self.poisson.targets[emitted], weights=self._source_charge[emitted], minlength=size
            )

        self._step += 1
        return fired

    def step_network(self, t: float, external_spikes: Sequence[SpikeEvent] = ()) -> List[SpikeEvent]:
        step = int(round(t / self.dt))
        if not math.isclose(step * self.dt, t, abs_tol=1e-9):
            raise SimulationError(f"t={t} ms is not a multiple of dt={self.dt} ms")
        if step != self._step:
            raise SimulationError(f"Expected step at t={self.time} ms, got t={t} ms")

        size = self.graph.size
        external_ids = []
        for event in external_spikes:
            if not 0 <= event.neuron < size:
                raise SimulationError(f"Unknown neuron id {event.neuron} in external spikes (network size {size})")
            external_ids.append(event.neuron)

        fired = self.advance(np.asarray(external_ids, dtype=np.int64))
        events = [SpikeEvent(t=step * self.dt, neuron=int(neuron)) for neuron in fired]
        if self.sink is not None:
            for event in events:
                self.sink(event)
        return events


def apply_mismatch(graph: NetworkGraph, sigma_m: float, rng: np.random.Generator) -> NetworkGraph:
    """Return a copy with tau_mem, v_thresh and synaptic weights jittered by Normal(1, sigma_m).

    Factors are clamped to [1 - 3 sigma_m, 1 + 3 sigma_m]. Poisson source weights
    are left untouched.
    """

    if not 0 <= sigma_m < 1:
        raise ConfigurationError(f"sigma_m must lie in [0, 1), got {sigma_m}")
    perturbed = graph.copy()
    if sigma_m == 0:
        return perturbed

    low = max(1.0 - 3.0 * sigma_m, MIN_MISMATCH_FACTOR)
    high = 1.0 + 3.0 * sigma_m

    def factors(count: int) -> np.ndarray:
        return np.clip(rng.normal(1.0, sigma_m, size=count), low, high)

    tau_factors = factors(graph.size)
    thresh_factors = factors(graph.size)
    weight_factors = factors(len(graph.synapses))

    perturbed.neurons = [
        replace(params, tau_mem=params.tau_mem * float(tau_factor), v_thresh=params.v_thresh * float(thresh_factor))
        for params, tau_factor, thresh_factor in zip(graph.neurons, tau_factors, thresh_factors)
    ]
    perturbed.synapses = [
        replace(synapse, weight=synapse.weight * float(factor))
        for synapse, factor in zip(graph.synapses, weight_factors)
    ]
    logger.debug(f"Applied mismatch sigma={sigma_m} to {graph.size} neurons and {len(graph.synapses)} synapses")
    return perturbed
