import math

import numpy as np
import pytest

from control_loop import DiscreteSequence, LoopConfig, Step, measure_relation, run_closed_loop
from experiments import build_graph
from plant import PlantConfig, PlantState
from threeway import TopologyConfig, direction_clusters


@pytest.fixture(scope="module")
def reference_graph():
    return build_graph(TopologyConfig())


@pytest.mark.parametrize(
    ("a", "b", "sign"),
    [
        pytest.param(1.0, 0.0, 1.0, id="target-above"),
        pytest.param(0.0, 1.0, -1.0, id="target-below"),
    ],
)
def test_relation_reading_reports_the_sign_of_a_large_difference(reference_graph, a, b, sign):
    reading = measure_relation(reference_graph, a, b, settle=0.3, window=0.5, seed=0)

    assert reading.decoded.defined
    assert sign * reading.decoded.c > 0.3
    assert reading.counts.sum() > 0


def test_relation_reading_is_reproducible(reference_graph):
    first = measure_relation(reference_graph, 0.75, 0.25, settle=0.2, window=0.3, seed=4)
    second = measure_relation(reference_graph, 0.75, 0.25, settle=0.2, window=0.3, seed=4)

    assert np.array_equal(first.counts, second.counts)
    assert first.decoded == second.decoded


def test_mismatch_changes_the_network_but_stays_seeded():
    cfg = TopologyConfig(n=4)

    first = build_graph(cfg, sigma_m=0.2, seed=1)
    again = build_graph(cfg, sigma_m=0.2, seed=1)
    other = build_graph(cfg, sigma_m=0.2, seed=2)

    assert first.synapses == again.synapses
    assert first.synapses != other.synapses
    assert build_graph(cfg).synapses != first.synapses


def test_short_step_run_moves_the_joint_towards_the_target(reference_graph):
    plant = PlantState.at_position(PlantConfig(), 0.3)
    profile = Step(t_on=0.0, a0=0.3, a1=0.85)

    traj = run_closed_loop(reference_graph, plant, profile, LoopConfig(), 2.0, seed=0)

    encoder = traj.column("encoder")
    assert encoder[-1] > encoder[0]
    assert traj.samples["command"].max() > 0


def test_zero_policy_still_produces_a_full_trajectory():
    graph = build_graph(TopologyConfig(n=4))
    plant = PlantState.at_position(PlantConfig(), 0.5)

    traj = run_closed_loop(graph, plant, Step(t_on=0.1, a0=0.5, a1=0.6), LoopConfig(settle_hold="zero"), 0.4, seed=1)

    assert len(traj.samples) == 20
    decoded = traj.column("decoded_error")
    assert math.isnan(decoded[0])


@pytest.fixture(scope="module")
def undirected_graph():
    return build_graph(TopologyConfig(direction_neurons=False))


def _cluster_count(counts: np.ndarray, name: str) -> float:
    return float(counts[list(direction_clusters(16)[name])].sum())


def test_direction_groups_suppress_the_minority_cluster(reference_graph, undirected_graph):
    # c = 0.6 centres the bump on C24, the first neuron of the ++ cluster
    with_directions = measure_relation(reference_graph, 0.8, 0.2, settle=0.5, window=1.0, seed=0)
    without = measure_relation(undirected_graph, 0.8, 0.2, settle=0.5, window=1.0, seed=0)

    assert _cluster_count(without.counts, "dir_p") > 0
    assert _cluster_count(with_directions.counts, "dir_p") < _cluster_count(without.counts, "dir_p")
    for name in ("dir_nn", "dir_n"):
        assert _cluster_count(with_directions.counts, name) <= _cluster_count(without.counts, name)


def _direction_spikes(graph, target: float, position: float):
    plant = PlantState.at_position(PlantConfig(), position)
    profile = DiscreteSequence(points=((0.0, target),))

    traj = run_closed_loop(graph, plant, profile, LoopConfig(kp=0.0), 1.0, seed=0)

    return traj.spike_table()["population"].value_counts()


@pytest.mark.parametrize(
    ("target", "position", "active", "quiet"),
    [
        pytest.param(0.8, 0.2, "dir_pp", "dir_nn", id="positive-error"),
        pytest.param(0.2, 0.8, "dir_nn", "dir_pp", id="negative-error"),
    ],
)
def test_mirrored_inputs_fire_the_mirrored_direction_group(reference_graph, target, position, active, quiet):
    fired = _direction_spikes(reference_graph, target, position)

    assert fired.get(active, 0) > 0
    assert fired.get(active, 0) > fired.get(quiet, 0)
