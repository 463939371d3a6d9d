import math

import numpy as np
import pytest

from errors import ConfigurationError, SimulationError, TopologyError
from snn_core import (
    MIN_MISMATCH_FACTOR,
    NetworkGraph,
    NetworkSimulator,
    NeuronParams,
    PoissonBank,
    PoissonSource,
    SpikeEvent,
    Synapse,
    apply_mismatch,
    poisson_tick,
    spike_probability,
    substream,
)


def _single_neuron(params: NeuronParams | None = None) -> NetworkGraph:
    graph = NetworkGraph()
    graph.add_population("X", 1, params or NeuronParams())
    return graph


def _spike_steps(simulator: NetworkSimulator, neuron: int, steps: int) -> list[int]:
    fired_at = []
    for _ in range(steps):
        step = simulator.step_index
        if neuron in simulator.advance():
            fired_at.append(step)
    return fired_at


def _expected_period(current: float, dt: float, params: NeuronParams) -> float:
    alpha = math.exp(-dt / params.tau_mem)
    rheobase = params.v_thresh * (1 - alpha) / dt
    integrate = math.ceil(params.tau_mem * math.log(current / (current - rheobase)) / dt)
    return (round(params.refractory / dt) + integrate) * dt


@pytest.mark.parametrize(
    ("current", "dt"),
    [
        pytest.param(0.1, 1.0, id="weak-bias"),
        pytest.param(0.2, 1.0, id="strong-bias"),
        pytest.param(0.1, 0.5, id="half-millisecond-step"),
    ],
)
def test_constant_bias_fires_with_closed_form_period(current, dt):
    params = NeuronParams()
    simulator = NetworkSimulator(_single_neuron(params), dt=dt)
    simulator.set_bias([0], current)

    fired_at = _spike_steps(simulator, 0, int(200 / dt))
    intervals = np.diff(fired_at) * dt

    assert len(fired_at) > 3
    assert np.allclose(intervals, _expected_period(current, dt, params))


def test_weak_bias_at_one_millisecond_gives_sixteen_millisecond_period():
    simulator = NetworkSimulator(_single_neuron(), dt=1.0)
    simulator.set_bias([0], 0.1)

    fired_at = _spike_steps(simulator, 0, 100)

    assert fired_at[:3] == [13, 29, 45]


def test_subthreshold_bias_never_fires():
    simulator = NetworkSimulator(_single_neuron(), dt=1.0)
    simulator.set_bias([0], 0.04)

    assert _spike_steps(simulator, 0, 500) == []


def test_membrane_is_clamped_during_refractory_period():
    params = NeuronParams(refractory=5.0)
    simulator = NetworkSimulator(_single_neuron(params), dt=1.0)
    simulator.set_bias([0], 5.0)

    first = _spike_steps(simulator, 0, 1)
    assert first == [0]
    for _ in range(5):
        simulator.advance()
        assert simulator.state(0).v == params.v_reset
    assert simulator.state(0).refractory_until == 5.0
    assert simulator.state(0).last_spike == 0.0


def test_spike_reaches_target_one_step_later_scaled_by_synaptic_tau():
    params = NeuronParams()
    graph = NetworkGraph()
    graph.add_population("X", 2, params)
    graph.connect(0, 1, 0.4, "test")
    simulator = NetworkSimulator(graph, dt=1.0)

    simulator.advance(np.array([0]))
    assert simulator.state(1).i_exc == 0.0

    simulator.advance()
    assert simulator.state(1).i_exc == pytest.approx(0.4 / params.tau_syn_exc)


def test_inhibitory_presynaptic_neuron_gets_negative_weight():
    graph = NetworkGraph()
    graph.add_population("E", 1, NeuronParams())
    graph.add_population("I", 1, NeuronParams().as_inhibitory())

    excitatory = graph.connect(0, 1, -0.3, "test")
    inhibitory = graph.connect(1, 0, 0.3, "test")

    assert excitatory.weight == pytest.approx(0.3)
    assert inhibitory.weight == pytest.approx(-0.3)
    graph.validate()


def test_inhibitory_spike_lowers_target_current():
    graph = NetworkGraph()
    graph.add_population("E", 1, NeuronParams())
    graph.add_population("I", 1, NeuronParams().as_inhibitory())
    graph.connect(1, 0, 0.5, "test")
    simulator = NetworkSimulator(graph, dt=1.0)

    simulator.advance(np.array([1]))
    simulator.advance()

    assert simulator.state(0).i_inh < 0
    assert simulator.state(0).v < 0


def test_validate_rejects_sign_inconsistent_synapse():
    graph = NetworkGraph()
    graph.add_population("I", 2, NeuronParams().as_inhibitory())
    graph.synapses.append(Synapse(pre=0, post=1, weight=0.2, role="bad"))

    with pytest.raises(TopologyError):
        graph.validate()


def test_validate_rejects_unknown_neuron_and_duplicate_population():
    graph = _single_neuron()
    graph.synapses.append(Synapse(pre=0, post=3, weight=0.1))

    with pytest.raises(TopologyError):
        graph.validate()
    with pytest.raises(TopologyError):
        graph.add_population("X", 1, NeuronParams())


@pytest.mark.parametrize(
    "kwargs",
    [
        pytest.param({"tau_mem": 0.0}, id="tau-mem"),
        pytest.param({"tau_syn_inh": -1.0}, id="tau-syn"),
        pytest.param({"v_thresh": 0.0, "v_reset": 0.0}, id="threshold"),
        pytest.param({"refractory": -1.0}, id="refractory"),
    ],
)
def test_neuron_params_reject_invalid_values(kwargs):
    with pytest.raises(ConfigurationError):
        NeuronParams(**kwargs)


def test_step_network_rejects_misaligned_or_skipped_times_and_unknown_ids():
    simulator = NetworkSimulator(_single_neuron(), dt=1.0)

    with pytest.raises(SimulationError):
        simulator.step_network(0.5)
    with pytest.raises(SimulationError):
        simulator.step_network(3.0)
    with pytest.raises(SimulationError):
        simulator.step_network(0.0, [SpikeEvent(t=0.0, neuron=7)])


def test_step_network_reports_spikes_to_sink():
    received = []
    simulator = NetworkSimulator(_single_neuron(), dt=1.0, sink=received.append)
    simulator.set_bias([0], 5.0)

    events = simulator.step_network(0.0)

    assert events == [SpikeEvent(t=0.0, neuron=0)]
    assert received == events
    assert simulator.time == 1.0


def test_spike_probability_rejects_rates_beyond_one_per_step():
    assert spike_probability(250.0, 1.0) == pytest.approx(0.25)
    with pytest.raises(ConfigurationError):
        spike_probability(1500.0, 1.0)


def test_poisson_tick_matches_rate_on_average():
    rng = substream(3, "tick")
    source = PoissonSource(rate=100.0, target=0, weight=1.0)

    count = sum(poisson_tick(source, 1.0, rng) for _ in range(10_000))

    assert abs(count - 1000) < 5 * math.sqrt(1000 * 0.9)


def test_poisson_bank_rate_and_zero_rate_sources():
    sources = [PoissonSource(rate=100.0, target=0, weight=1.0), PoissonSource(rate=0.0, target=0, weight=1.0)]
    bank = PoissonBank(sources, dt=1.0, seed=11)

    draws = np.array([bank.draw() for _ in range(10_000)])

    assert abs(draws[:, 0].sum() - 1000) < 5 * math.sqrt(1000 * 0.9)
    assert draws[:, 1].sum() == 0


def test_poisson_bank_rejects_negative_rates():
    bank = PoissonBank([PoissonSource(rate=10.0, target=0, weight=1.0)], dt=1.0, seed=0)

    with pytest.raises(ConfigurationError):
        bank.set_rates([0], [-1.0])
    with pytest.raises(ConfigurationError):
        PoissonSource(rate=-5.0, target=0, weight=1.0)


def test_substreams_are_reproducible_and_independent():
    first = substream(42, "poisson", 3).random(5)
    again = substream(42, "poisson", 3).random(5)
    other_key = substream(42, "poisson", 4).random(5)
    other_seed = substream(43, "poisson", 3).random(5)

    assert np.array_equal(first, again)
    assert not np.array_equal(first, other_key)
    assert not np.array_equal(first, other_seed)


def _driven_pair() -> NetworkGraph:
    graph = NetworkGraph()
    graph.add_population("X", 2, NeuronParams())
    graph.connect(0, 1, 0.8, "test")
    graph.add_source(0, 1.0, rate=200.0)
    graph.add_source(1, 1.0, rate=200.0)
    return graph


def _record(seed: int, steps: int = 500) -> list[tuple[int, int]]:
    simulator = NetworkSimulator(_driven_pair(), dt=1.0, seed=seed)
    spikes = []
    for step in range(steps):
        spikes.extend((step, int(neuron)) for neuron in simulator.advance())
    return spikes


def test_same_seed_gives_identical_spike_record():
    assert _record(5) == _record(5)
    assert _record(5) != _record(6)


def test_reset_replays_the_same_run():
    simulator = NetworkSimulator(_driven_pair(), dt=1.0, seed=9)
    first = [simulator.advance().tolist() for _ in range(200)]
    simulator.reset()
    second = [simulator.advance().tolist() for _ in range(200)]

    assert first == second


def _mismatch_graph() -> NetworkGraph:
    graph = NetworkGraph()
    graph.add_population("E", 50, NeuronParams())
    graph.add_population("I", 10, NeuronParams().as_inhibitory())
    for pre in range(60):
        graph.connect(pre, (pre + 1) % 60, 0.5, "ring")
    graph.add_source(0, 1.0)
    return graph


def test_zero_mismatch_leaves_graph_unchanged():
    graph = _mismatch_graph()

    perturbed = apply_mismatch(graph, 0.0, substream(0, "mismatch"))

    assert perturbed is not graph
    assert perturbed.neurons == graph.neurons
    assert perturbed.synapses == graph.synapses


def test_mismatch_factors_are_clamped_and_signs_kept():
    graph = _mismatch_graph()
    sigma = 0.4

    perturbed = apply_mismatch(graph, sigma, substream(1, "mismatch"))

    low, high = max(1 - 3 * sigma, MIN_MISMATCH_FACTOR), 1 + 3 * sigma
    for before, after in zip(graph.synapses, perturbed.synapses):
        ratio = after.weight / before.weight
        assert low - 1e-12 <= ratio <= high + 1e-12
    for before, after in zip(graph.neurons, perturbed.neurons):
        assert low - 1e-12 <= after.tau_mem / before.tau_mem <= high + 1e-12
    assert perturbed.sources == graph.sources
    perturbed.validate()


def test_mismatch_is_deterministic_per_generator_seed():
    graph = _mismatch_graph()

    first = apply_mismatch(graph, 0.2, substream(7, "mismatch"))
    second = apply_mismatch(graph, 0.2, substream(7, "mismatch"))

    assert first.synapses == second.synapses
    assert first.neurons == second.neurons


@pytest.mark.parametrize("sigma", [-0.1, 1.0])
def test_mismatch_rejects_sigma_outside_unit_interval(sigma):
    with pytest.raises(ConfigurationError):
        apply_mismatch(_mismatch_graph(), sigma, substream(0, "mismatch"))


def test_leak_decays_potential_exactly_without_input():
    params = NeuronParams()
    simulator = NetworkSimulator(_single_neuron(params), dt=0.5)
    simulator.set_potential([0], 0.8)

    for k in range(1, 41):
        simulator.advance()
        assert simulator.state(0).v == pytest.approx(0.8 * math.exp(-k * 0.5 / params.tau_mem), rel=1e-12)


def _listener_potential(external_by_step: dict[int, list[int]], steps: int = 40) -> np.ndarray:
    graph = NetworkGraph()
    graph.add_population("Pre", 2, NeuronParams())
    graph.add_population("Post", 1, NeuronParams(v_thresh=math.inf))
    graph.connect(0, 2, 0.7, "test")
    graph.connect(1, 2, 0.3, "test")
    simulator = NetworkSimulator(graph, dt=1.0)
    trace = []
    for step in range(steps):
        simulator.advance(np.array(external_by_step.get(step, []), dtype=np.int64))
        trace.append(simulator.state(2).v)
    return np.array(trace)


def test_input_trains_superpose_below_an_unreachable_threshold():
    first = {0: [0], 6: [0], 7: [0]}
    second = {2: [1], 6: [1], 20: [1]}
    both = {step: first.get(step, []) + second.get(step, []) for step in set(first) | set(second)}

    combined = _listener_potential(both)

    np.testing.assert_allclose(combined, _listener_potential(first) + _listener_potential(second), rtol=1e-12, atol=1e-15)
    assert combined.max() > _listener_potential(first).max()


def _population_rate(dt: float, seconds: float = 10.0) -> float:
    graph = NetworkGraph()
    graph.add_population("X", 40, NeuronParams())
    simulator = NetworkSimulator(graph, dt=dt)
    for neuron, current in enumerate(np.linspace(0.07, 0.2, 40)):
        simulator.set_bias([neuron], float(current))
    spikes = sum(simulator.advance().size for _ in range(int(round(seconds * 1000 / dt))))
    return spikes / (40 * seconds)


def test_halving_dt_keeps_population_rate_within_five_percent():
    coarse = _population_rate(1.0)
    fine = _population_rate(0.5)

    assert fine > 0
    assert abs(coarse - fine) / fine < 0.05


def test_mismatch_threshold_spread_matches_sigma():
    graph = NetworkGraph()
    graph.add_population("X", 2000, NeuronParams())

    perturbed = apply_mismatch(graph, 0.2, substream(5, "mismatch"))

    thresholds = np.array([params.v_thresh for params in perturbed.neurons])
    assert thresholds.std() == pytest.approx(0.2 * thresholds.mean(), rel=0.15)
