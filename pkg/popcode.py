from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional
import math

import numpy as np

from errors import ConfigurationError, EncodingRangeError, TraceOrderError
from snn_core import SpikeEvent


TIME_TOLERANCE = 1e-12


@dataclass(frozen=True)
class EncoderConfig:
    n: int = 16
    rate_max: float = 250.0
    sigma: float = 1.0

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ConfigurationError(f"Population size n must be at least 2, got {self.n}")
        if self.rate_max <= 0:
            raise ConfigurationError(f"rate_max must be positive, got {self.rate_max}")
        if self.sigma <= 0:
            raise ConfigurationError(f"sigma must be positive, got {self.sigma}")

    @property
    def output_size(self) -> int:
        return 2 * self.n - 1


@dataclass(frozen=True)
class RateVector:
    rates: np.ndarray

    @property
    def peak_index(self) -> int:
        return int(np.argmax(self.rates))


@dataclass(frozen=True)
class TraceVector:
    """Exponentially decaying spike counters for one output population.

    ``tau`` and ``last_update`` are in seconds. ``first_neuron`` is the global id
    of the neuron stored at index 0; spikes of other neurons are ignored.
    """

    values: np.ndarray
    tau: float
    last_update: float = 0.0
    first_neuron: int = 0

    @classmethod
    def zeros(cls, size: int, tau: float, first_neuron: int = 0, start: float = 0.0) -> "TraceVector":
        if tau <= 0:
            raise ConfigurationError(f"Trace tau must be positive, got {tau}")
        return cls(values=np.zeros(size), tau=tau, last_update=start, first_neuron=first_neuron)

    @property
    def mass(self) -> float:
        return float(self.values.sum())


@dataclass(frozen=True)
class DecodedValue:
    c: Optional[float]
    confidence: float

    @property
    def defined(self) -> bool:
        return self.c is not None


def encode_value(a: float, cfg: EncoderConfig) -> RateVector:
    if not 0.0 <= a <= 1.0:
        raise EncodingRangeError(f"Encoded value must lie in [0, 1], got {a}")
    mu = a * (cfg.n - 1)
    index = np.arange(cfg.n)
    rates = np.exp(-((index - mu) ** 2) / (2.0 * cfg.sigma ** 2)) * cfg.rate_max
    return RateVector(rates=rates)


def update_trace_arrays(tr: TraceVector, times: np.ndarray, neurons: np.ndarray, now: float) -> TraceVector:
    """Array form of ``update_trace``; ``times`` in seconds, sorted."""

    if now < tr.last_update - TIME_TOLERANCE:
        raise TraceOrderError(f"Trace read at {now} s precedes its last update at {tr.last_update} s")
    times = np.asarray(times, dtype=float)
    neurons = np.asarray(neurons, dtype=np.int64)
    if times.size:
        if np.any(np.diff(times) < 0):
            raise TraceOrderError("Spikes must be delivered sorted by time")
        if times[0] < tr.last_update - TIME_TOLERANCE or times[-1] > now + TIME_TOLERANCE:
            raise TraceOrderError(
                f"Spike times [{times[0]}, {times[-1]}] s fall outside the update interval "
                f"[{tr.last_update}, {now}] s"
            )

    values = tr.values * math.exp(-(now - tr.last_update) / tr.tau)
    if times.size:
        local = neurons - tr.first_neuron
        inside = (local >= 0) & (local < values.size)
        np.add.at(values, local[inside], np.exp(-(now - times[inside]) / tr.tau))
    return TraceVector(values=values, tau=tr.tau, last_update=now, first_neuron=tr.first_neuron)


def update_trace(tr: TraceVector, spikes: Iterable[SpikeEvent], now: float) -> TraceVector:
    """Decay every E_j to ``now`` (s) and add one per spike, decayed from its own time."""

    spikes = list(spikes)
    times = np.array([spike.t for spike in spikes], dtype=float) / 1000.0
    neurons = np.array([spike.neuron for spike in spikes], dtype=np.int64)
    return update_trace_arrays(tr, times, neurons, now)


def _center_of_mass(weights: np.ndarray, n: int) -> DecodedValue:
    expected = 2 * n - 1
    if weights.size != expected:
        raise ConfigurationError(f"Output population must have {expected} neurons for n={n}, got {weights.size}")
    mass = float(weights.sum())
    if mass <= 0:
        return DecodedValue(c=None, confidence=0.0)
    j_hat = float(np.dot(weights, np.arange(expected))) / mass
    x_c = j_hat / (2 * n - 2)
    c = min(1.0, max(-1.0, 2.0 * x_c - 1.0))
    return DecodedValue(c=c, confidence=mass)


def decode_com(tr: TraceVector, n: int) -> DecodedValue:
    return _center_of_mass(np.asarray(tr.values, dtype=float), n)


def decode_counts(counts: np.ndarray, n: int) -> DecodedValue:
    """Center of mass over raw spike counts of the output population."""

    return _center_of_mass(np.asarray(counts, dtype=float), n)


def winner_index(values: np.ndarray) -> Optional[int]:
    values = np.asarray(values, dtype=float)
    if values.size == 0 or values.max() <= 0:
        return None
    return int(np.argmax(values))


def _profile_peak(rates: np.ndarray, sigma: float) -> float:
    """Sub-index centre of a sampled Gaussian profile of known width."""

    k = int(np.argmax(rates))
    if k == rates.size - 1:
        k -= 1
    # log of a Gaussian is a parabola, so two adjacent samples pin the centre
    return k + 0.5 + sigma ** 2 * (math.log(rates[k + 1]) - math.log(rates[k]))


def ideal_difference(a: float, b: float, cfg: EncoderConfig) -> DecodedValue:
    """Noiseless reference: subtract the two profile centres and decode on the output axis.

    The difference lands on output index mu_a - mu_b + n - 1 and is split between
    the two neighbouring neurons so the center of mass sits on it.
    """

    mu_a = _profile_peak(encode_value(a, cfg).rates, cfg.sigma)
    mu_b = _profile_peak(encode_value(b, cfg).rates, cfg.sigma)
    position = min(max(mu_a - mu_b + cfg.n - 1, 0.0), 2.0 * cfg.n - 2)
    low = int(math.floor(position))
    high = min(low + 1, 2 * cfg.n - 2)
    mass = np.zeros(cfg.output_size)
    mass[low] += 1.0 - (position - low)
    mass[high] += position - low
    return _center_of_mass(mass, cfg.n)
