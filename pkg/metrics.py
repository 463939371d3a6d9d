from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Tuple
import math

import numpy as np
import pandas as pd

from control_loop import Trajectory
from errors import ConfigurationError, MetricWindowError


WINDOW_TOLERANCE = 1e-9
METRIC_FIELDS = ["rmse", "rise_time", "overshoot", "band_fraction", "sign_agreement", "winner_peak"]


@dataclass
class Metrics:
    seed: int
    rmse: float
    rise_time: Optional[float] = None
    overshoot: Optional[float] = None
    band_fraction: Optional[float] = None
    sign_agreement: Optional[float] = None
    winner_peak: Optional[int] = None

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _window_mask(traj: Trajectory, window_start: float, window_len: float) -> np.ndarray:
    window_end = window_start + window_len
    if window_start < 0 or window_len <= 0 or window_end > traj.duration + WINDOW_TOLERANCE:
        raise MetricWindowError(
            f"Window [{window_start}, {window_end}] s is not covered by a {traj.duration} s trajectory"
        )
    t = traj.column("t")
    mask = (t >= window_start - WINDOW_TOLERANCE) & (t <= window_end + WINDOW_TOLERANCE)
    if not mask.any():
        raise MetricWindowError(f"No samples inside [{window_start}, {window_end}] s")
    return mask


def rmse(traj: Trajectory, window_start: float, window_len: float = 40.0) -> float:
    mask = _window_mask(traj, window_start, window_len)
    error = traj.column("target")[mask] - traj.column("encoder")[mask]
    return float(np.sqrt(np.mean(error ** 2)))


def step_levels(traj: Trajectory, step_onset: float) -> Tuple[float, float]:
    """Target level just before and at the step onset."""

    t = traj.column("t")
    target = traj.column("target")
    before = np.flatnonzero(t < step_onset - WINDOW_TOLERANCE)
    after = np.flatnonzero(t >= step_onset - WINDOW_TOLERANCE)
    if after.size == 0:
        raise MetricWindowError(f"Trajectory ends before the step onset at {step_onset} s")
    a0 = float(target[before[-1]]) if before.size else float(target[0])
    a1 = float(target[after[0]])
    if a0 == a1:
        raise ConfigurationError(f"Target does not change at {step_onset} s")
    return a0, a1


def rise_time(
    traj: Trajectory,
    step_onset: float,
    a0: Optional[float] = None,
    a1: Optional[float] = None,
) -> Optional[float]:
    """Seconds from onset until the encoder first passes 90% of the step; None when never reached."""

    if a0 is None or a1 is None:
        a0, a1 = step_levels(traj, step_onset)
    threshold = a0 + 0.9 * (a1 - a0)
    t = traj.column("t")
    encoder = traj.column("encoder")
    reached = encoder >= threshold if a1 > a0 else encoder <= threshold
    crossings = np.flatnonzero((t >= step_onset - WINDOW_TOLERANCE) & reached)
    if crossings.size == 0:
        return None
    return float(t[crossings[0]] - step_onset)


def overshoot(
    traj: Trajectory,
    step_onset: float,
    a0: Optional[float] = None,
    a1: Optional[float] = None,
) -> float:
    if a0 is None or a1 is None:
        a0, a1 = step_levels(traj, step_onset)
    t = traj.column("t")
    after = t >= step_onset - WINDOW_TOLERANCE
    direction = 1.0 if a1 > a0 else -1.0
    excursion = (traj.column("encoder")[after] - a1) * direction
    peak = float(excursion.max()) if excursion.size else 0.0
    return max(0.0, peak) / abs(a1 - a0)


def band_fraction(
    traj: Trajectory,
    window_start: float,
    window_len: float,
    tolerance: float = 0.05,
    relative: bool = True,
) -> float:
    """Fraction of samples whose encoder lies within the tolerance band around the target."""

    mask = _window_mask(traj, window_start, window_len)
    target = traj.column("target")[mask]
    error = np.abs(target - traj.column("encoder")[mask])
    limit = tolerance * np.abs(target) if relative else tolerance
    return float(np.mean(error <= limit))


def sign_agreement(
    traj: Trajectory,
    window_start: float = 0.0,
    window_len: Optional[float] = None,
    min_error: float = 0.0,
) -> Optional[float]:
    """Fraction of decoded samples whose sign matches the expected error a - b."""

    window_len = traj.duration - window_start if window_len is None else window_len
    mask = _window_mask(traj, window_start, window_len)
    decoded = traj.column("decoded_error")[mask]
    expected = traj.column("expected_error")[mask]
    usable = ~np.isnan(decoded) & (np.abs(expected) > min_error)
    if not usable.any():
        return None
    return float(np.mean(np.sign(decoded[usable]) == np.sign(expected[usable])))


def winner_peak(traj: Trajectory, window_start: float, window_len: float) -> Optional[int]:
    mask = _window_mask(traj, window_start, window_len)
    winners = traj.column("winner")[mask]
    winners = winners[winners >= 0]
    return int(winners.max()) if winners.size else None


def aggregate_metrics(runs: List[Metrics]) -> Dict[str, Dict[str, float]]:
    """Mean, std, median and count of each metric across runs, ignoring missing values."""

    if not runs:
        return {}
    frame = pd.DataFrame([run.as_dict() for run in runs])
    summary: Dict[str, Dict[str, float]] = {}
    for name in METRIC_FIELDS:
        values = pd.to_numeric(frame[name], errors="coerce").dropna()
        if values.empty:
            continue
        std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
        summary[name] = {
            "mean": float(values.mean()),
            "std": 0.0 if math.isnan(std) else std,
            "median": float(values.median()),
            "count": int(values.count()),
        }
    return summary
