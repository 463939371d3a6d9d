import numpy as np
import pandas as pd
import pytest

from control_loop import TRAJECTORY_COLUMNS, Trajectory
from errors import ConfigurationError, MetricWindowError
from metrics import (
    Metrics,
    aggregate_metrics,
    band_fraction,
    overshoot,
    rise_time,
    rmse,
    sign_agreement,
    step_levels,
    winner_peak,
)


def _trajectory(target, encoder, decoded=None, winner=None, period=0.02) -> Trajectory:
    target = np.asarray(target, dtype=float)
    encoder = np.asarray(encoder, dtype=float)
    count = target.size
    samples = pd.DataFrame({
        "t": np.arange(count) * period,
        "target": target,
        "encoder": encoder,
        "decoded_error": np.full(count, np.nan) if decoded is None else np.asarray(decoded, dtype=float),
        "expected_error": target - encoder,
        "command": np.zeros(count),
        "winner": np.full(count, -1) if winner is None else np.asarray(winner),
    })
    return Trajectory(
        samples=samples[TRAJECTORY_COLUMNS + ["winner"]],
        spike_times=np.zeros(0),
        spike_neurons=np.zeros(0, dtype=np.int64),
        neuron_labels=np.zeros(0, dtype=object),
        duration=count * period,
        control_period=period,
    )


def _step_trajectory(encoder, onset_index=10, a0=0.3, a1=0.8):
    count = len(encoder)
    target = np.where(np.arange(count) >= onset_index, a1, a0)
    return _trajectory(target, encoder)


def test_rmse_is_zero_when_tracking_is_perfect():
    values = np.linspace(0.2, 0.8, 100)

    assert rmse(_trajectory(values, values), 0.0, 1.0) == 0.0


def test_rmse_of_constant_offset_equals_offset():
    traj = _trajectory(np.full(100, 0.6), np.full(100, 0.5))

    assert rmse(traj, 0.0, 1.0) == pytest.approx(0.1)


def test_rmse_only_uses_samples_inside_window():
    encoder = np.concatenate([np.full(50, 0.0), np.full(50, 0.5)])
    traj = _trajectory(np.full(100, 0.5), encoder)

    assert rmse(traj, 1.0, 0.98) == 0.0


@pytest.mark.parametrize(("start", "length"), [(0.0, 5.0), (-1.0, 1.0), (0.5, 0.0)])
def test_rmse_rejects_windows_outside_trajectory(start, length):
    traj = _trajectory(np.full(100, 0.5), np.full(100, 0.5))

    with pytest.raises(MetricWindowError):
        rmse(traj, start, length)


def test_step_levels_reads_target_around_onset():
    traj = _step_trajectory(np.full(40, 0.3))

    assert step_levels(traj, 0.2) == (0.3, 0.8)
    with pytest.raises(ConfigurationError):
        step_levels(traj, 0.1)


def test_rise_time_is_zero_for_instant_jump():
    encoder = np.where(np.arange(40) >= 10, 0.8, 0.3)

    assert rise_time(_step_trajectory(encoder), 0.2) == pytest.approx(0.0)


def test_rise_time_measures_first_ninety_percent_crossing():
    encoder = np.concatenate([np.full(10, 0.3), [0.4, 0.5, 0.6, 0.7, 0.78], np.full(25, 0.8)])

    assert rise_time(_step_trajectory(encoder), 0.2) == pytest.approx(4 * 0.02)


def test_rise_time_is_none_when_never_reached():
    encoder = np.full(40, 0.5)

    assert rise_time(_step_trajectory(encoder), 0.2) is None


def test_rise_time_handles_downward_steps():
    encoder = np.concatenate([np.full(12, 0.8), np.full(28, 0.3)])

    assert rise_time(_step_trajectory(encoder, a0=0.8, a1=0.3), 0.2) == pytest.approx(0.04)


def test_overshoot_is_zero_for_monotone_approach():
    encoder = np.concatenate([np.full(10, 0.3), np.linspace(0.3, 0.8, 30)])

    assert overshoot(_step_trajectory(encoder), 0.2) == 0.0


def test_overshoot_is_fraction_of_step_size():
    encoder = np.concatenate([np.full(10, 0.3), np.full(5, 0.6), [0.85], np.full(24, 0.8)])

    assert overshoot(_step_trajectory(encoder), 0.2, a0=0.3, a1=0.8) == pytest.approx(0.10)


def test_band_fraction_counts_samples_within_relative_tolerance():
    target = np.full(100, 0.5)
    encoder = np.concatenate([np.full(25, 0.4), np.full(75, 0.49)])

    assert band_fraction(_trajectory(target, encoder), 0.0, 1.98) == pytest.approx(0.75)
    assert band_fraction(_trajectory(target, encoder), 0.0, 1.98, tolerance=0.2, relative=False) == 1.0


def test_sign_agreement_skips_undecoded_samples():
    target = np.full(6, 0.5)
    encoder = np.array([0.4, 0.4, 0.6, 0.6, 0.4, 0.6])
    decoded = np.array([np.nan, 0.1, -0.1, 0.1, 0.05, -0.2])

    assert sign_agreement(_trajectory(target, encoder, decoded)) == pytest.approx(0.8)


def test_sign_agreement_is_none_without_decoded_samples():
    assert sign_agreement(_trajectory(np.full(10, 0.5), np.full(10, 0.4))) is None


def test_winner_peak_ignores_missing_winners():
    winners = [-1, 15, 18, 24, 20, 15]
    traj = _trajectory(np.full(6, 0.5), np.full(6, 0.5), winner=winners)

    assert winner_peak(traj, 0.0, 0.1) == 24
    assert winner_peak(_trajectory(np.full(6, 0.5), np.full(6, 0.5)), 0.0, 0.1) is None


def test_aggregate_metrics_reports_mean_std_and_count():
    runs = [
        Metrics(seed=0, rmse=0.02, rise_time=1.0),
        Metrics(seed=1, rmse=0.04, rise_time=None),
        Metrics(seed=2, rmse=0.03, rise_time=2.0),
    ]

    summary = aggregate_metrics(runs)

    assert summary["rmse"]["mean"] == pytest.approx(0.03)
    assert summary["rmse"]["std"] == pytest.approx(0.01)
    assert summary["rmse"]["count"] == 3
    assert summary["rise_time"]["count"] == 2
    assert "overshoot" not in summary
    assert aggregate_metrics([]) == {}
