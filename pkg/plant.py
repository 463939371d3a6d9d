from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Optional, Tuple

import numpy as np

from errors import ConfigurationError


@dataclass(frozen=True)
class PlantConfig:
    theta_min: float = 0.0
    theta_max: float = 90.0
    v_max: float = 120.0
    encoder_noise_sigma: float = 0.0
    latency: float = 20.0

    def __post_init__(self) -> None:
        if not self.theta_max > self.theta_min:
            raise ConfigurationError(f"theta_max ({self.theta_max}) must exceed theta_min ({self.theta_min})")
        if self.v_max <= 0:
            raise ConfigurationError(f"v_max must be positive, got {self.v_max}")
        if self.encoder_noise_sigma < 0:
            raise ConfigurationError(f"encoder_noise_sigma must be non-negative, got {self.encoder_noise_sigma}")
        if self.latency < 0:
            raise ConfigurationError(f"latency must be non-negative, got {self.latency}")

    @property
    def span(self) -> float:
        return self.theta_max - self.theta_min


@dataclass
class PlantState:
    """Joint angle plus the commands still travelling through the latency line.

    ``pending`` holds (issue time ms, command deg/s); ``applied`` is the command
    currently moving the joint.
    """

    config: PlantConfig
    theta: float
    clock: float = 0.0
    applied: float = 0.0
    pending: Deque[Tuple[float, float]] = field(default_factory=deque)

    @classmethod
    def at_position(cls, config: PlantConfig, position: float) -> "PlantState":
        """Start at a normalized position in [0, 1]."""

        return cls(config=config, theta=denormalize(position, config))


def normalize(theta: float, cfg: PlantConfig) -> float:
    return (theta - cfg.theta_min) / cfg.span


def denormalize(position: float, cfg: PlantConfig) -> float:
    return cfg.theta_min + position * cfg.span


def plant_step(state: PlantState, u: float, dt: float) -> PlantState:
    """Advance the joint by ``dt`` ms under the command issued ``latency`` ago."""

    cfg = state.config
    state.pending.append((state.clock, u))
    release = state.clock - cfg.latency
    while state.pending and state.pending[0][0] <= release + 1e-9:
        state.applied = state.pending.popleft()[1]

    velocity = min(cfg.v_max, max(-cfg.v_max, state.applied))
    theta = state.theta + velocity * dt / 1000.0
    state.theta = min(cfg.theta_max, max(cfg.theta_min, theta))
    state.clock += dt
    return state


def read_encoder(state: PlantState, cfg: Optional[PlantConfig] = None, rng: Optional[np.random.Generator] = None) -> float:
    cfg = cfg or state.config
    reading = normalize(state.theta, cfg)
    if cfg.encoder_noise_sigma > 0:
        if rng is None:
            raise ConfigurationError("A noisy encoder needs a random generator")
        reading += float(rng.normal(0.0, cfg.encoder_noise_sigma))
    return min(1.0, max(0.0, reading))
