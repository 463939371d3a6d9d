from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple
import json
import logging
import math

from errors import ConfigurationError, TopologyError
from snn_core import NetworkGraph, NeuronParams, sign_consistent


logger = logging.getLogger(__name__)

# Coincidence check: one input train at this rate stays subthreshold, two cross
# threshold within the window.
COINCIDENCE_RATE_HZ = 250.0
COINCIDENCE_WINDOW_MS = 50.0

DIRECTION_CLUSTERS = ("dir_nn", "dir_n", "dir_p", "dir_pp")

ROLE_A_TO_H = "a_to_h"
ROLE_B_TO_H = "b_to_h"
ROLE_H_TO_C = "h_to_c"
ROLE_SELF = "self"
ROLE_LATERAL = "lateral"
ROLE_PROFILE = "profile"
ROLE_INH_DRIVE = "inh_drive"
ROLE_GLOBAL_INH = "global_inh"
ROLE_H_TO_SHADOW = "h_to_shadow"
ROLE_SHADOW_INH = "shadow_inh"
ROLE_DIR_EXC = "dir_exc"
ROLE_DIR_INH = "dir_inh"


@dataclass(frozen=True)
class WeightTable:
    w_input: float = 1.0
    w_ab_h: float = 0.17
    w_h_c: float = 1.5
    w_self: float = 0.1
    w_lateral: float = 0.15
    w_global_inh: float = 0.5
    w_inh_drive: float = 0.3
    w_h_shadow: float = 2.0
    w_shadow_inh: float = 0.06
    w_dir_exc: float = 1.0
    w_dir_inh: float = 0.6

    def check(self, neuron: NeuronParams = NeuronParams()) -> List[str]:
        """Return the invariant violations of this table, empty when valid."""

        problems = [f"{name} must be positive, got {value}" for name, value in asdict(self).items() if value <= 0]
        if self.w_lateral <= self.w_self:
            problems.append(f"w_lateral ({self.w_lateral}) must exceed w_self ({self.w_self})")

        single = steady_potential(self.w_ab_h, COINCIDENCE_RATE_HZ, neuron)
        if single >= neuron.v_thresh:
            problems.append(
                f"w_ab_h={self.w_ab_h} alone settles at {single:.3f}, at or above threshold {neuron.v_thresh}"
            )
        crossing = time_to_threshold(2 * self.w_ab_h, COINCIDENCE_RATE_HZ, neuron)
        if crossing is None or crossing > COINCIDENCE_WINDOW_MS:
            problems.append(
                f"2 * w_ab_h={2 * self.w_ab_h} does not cross threshold within {COINCIDENCE_WINDOW_MS} ms"
            )
        return problems


def steady_potential(weight: float, rate_hz: float, neuron: NeuronParams, dt: float = 1.0) -> float:
    """Mean membrane level under a regular presynaptic train, ignoring threshold."""

    alpha = math.exp(-dt / neuron.tau_mem)
    syn_decay = math.exp(-dt / neuron.tau_syn_exc)
    charge_per_spike = dt * (weight / neuron.tau_syn_exc) / (1.0 - syn_decay)
    return (rate_hz * dt / 1000.0) * charge_per_spike / (1.0 - alpha)


def time_to_threshold(weight: float, rate_hz: float, neuron: NeuronParams, dt: float = 1.0) -> Optional[float]:
    level = steady_potential(weight, rate_hz, neuron, dt)
    target = neuron.v_thresh - neuron.v_reset
    if level <= target:
        return None
    return neuron.tau_mem * math.log(level / (level - target))


@dataclass(frozen=True)
class TopologyConfig:
    n: int = 16
    twin_hidden: bool = True
    shadow_inhibition: bool = True
    direction_neurons: bool = True
    weight_table: WeightTable = field(default_factory=WeightTable)
    wta_sigma: float = 1.0
    direction_group_size: int = 1
    neuron: NeuronParams = field(default_factory=NeuronParams)

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ConfigurationError(f"Topology n must be at least 2, got {self.n}")
        if self.wta_sigma <= 0:
            raise ConfigurationError(f"wta_sigma must be positive, got {self.wta_sigma}")
        if self.direction_group_size < 1:
            raise ConfigurationError(f"direction_group_size must be at least 1, got {self.direction_group_size}")


@dataclass(frozen=True)
class PopulationLayout:
    n: int
    a: range
    b: range
    hidden: Tuple[range, ...]
    shadows: Tuple[range, ...]
    c: range
    inhibitors: Dict[str, int]
    directions: Dict[str, range]

    @classmethod
    def plan(cls, cfg: TopologyConfig, with_directions: Optional[bool] = None) -> "PopulationLayout":
        with_directions = cfg.direction_neurons if with_directions is None else with_directions
        n = cfg.n
        cursor = 0

        def take(count: int) -> range:
            nonlocal cursor
            ids = range(cursor, cursor + count)
            cursor += count
            return ids

        a = take(n)
        b = take(n)
        copies = 2 if cfg.twin_hidden else 1
        hidden = tuple(take(n * n) for _ in range(copies))
        shadows = tuple(take(n * n) for _ in range(copies)) if cfg.shadow_inhibition else ()
        c = take(2 * n - 1)
        inhibitors = {name: take(1).start for name in ("A", "B", "C")}
        directions = (
            {name: take(cfg.direction_group_size) for name in DIRECTION_CLUSTERS} if with_directions else {}
        )
        return cls(n=n, a=a, b=b, hidden=hidden, shadows=shadows, c=c, inhibitors=inhibitors, directions=directions)

    @property
    def core_size(self) -> int:
        return self.c.stop + len(self.inhibitors)

    @property
    def total(self) -> int:
        return self.core_size + sum(len(ids) for ids in self.directions.values())

    def hidden_id(self, copy_index: int, i: int, j: int) -> int:
        """Global id of cell (i, j): A-index i selects the column, B-index j the row."""

        return self.hidden[copy_index].start + i * self.n + j

    def hidden_cell(self, neuron: int) -> Optional[Tuple[int, int, int]]:
        for copy_index, ids in enumerate(self.hidden):
            if neuron in ids:
                offset = neuron - ids.start
                return copy_index, offset // self.n, offset % self.n
        return None


def diag_index(i: int, j: int, n: int) -> int:
    if not (0 <= i < n and 0 <= j < n):
        raise TopologyError(f"Indices ({i}, {j}) out of range for n={n}")
    return i - j + (n - 1)


def direction_clusters(n: int) -> Dict[str, range]:
    """C-index clusters for large negative, negative, positive and large positive error.

    The zero-error neuron n - 1 belongs to none of them; the negative clusters
    mirror the positive ones about it.
    """

    center = n - 1
    split = math.ceil(center / 2)
    return {
        "dir_nn": range(0, center - split),
        "dir_n": range(center - split, center),
        "dir_p": range(center + 1, center + 1 + split),
        "dir_pp": range(center + 1 + split, 2 * n - 1),
    }


def _profile_weights(peak: float, sigma: float) -> List[Tuple[int, float]]:
    reach = max(1, math.ceil(2 * sigma))
    return [(d, peak * math.exp(-(d ** 2) / (2 * sigma ** 2))) for d in range(1, reach + 1)]


def _connect_wta(graph: NetworkGraph, ids: range, inhibitor: int, weights: WeightTable, sigma: float, lateral: bool) -> None:
    """Self-excitation profile plus a dedicated global inhibitory neuron."""

    size = len(ids)
    for index, neuron in enumerate(ids):
        graph.connect(neuron, neuron, weights.w_self, ROLE_SELF)
        for distance, weight in _profile_weights(weights.w_self, sigma):
            if lateral and distance == 1:
                continue
            for target in (index - distance, index + distance):
                if 0 <= target < size:
                    graph.connect(neuron, ids.start + target, weight, ROLE_PROFILE)
        if lateral:
            for target in (index - 1, index + 1):
                if 0 <= target < size:
                    graph.connect(neuron, ids.start + target, weights.w_lateral, ROLE_LATERAL)
        graph.connect(neuron, inhibitor, weights.w_inh_drive, ROLE_INH_DRIVE)
        graph.connect(inhibitor, neuron, weights.w_global_inh, ROLE_GLOBAL_INH)


def _hidden_neighbours(i: int, j: int, n: int) -> List[Tuple[int, int]]:
    candidates = [(i + 1, j), (i, j + 1), (i - 1, j), (i, j - 1)]
    return [(x, y) for x, y in candidates if 0 <= x < n and 0 <= y < n][:3]


def build_threeway(cfg: TopologyConfig) -> NetworkGraph:
    """Wire A and B through the hidden grid(s) onto C, without direction neurons."""

    problems = cfg.weight_table.check(cfg.neuron)
    if problems:
        raise TopologyError("Invalid weight table: " + "; ".join(problems))

    layout = PopulationLayout.plan(cfg, with_directions=False)
    weights = cfg.weight_table
    n = cfg.n
    excitatory = replace(cfg.neuron, is_inhibitory=False)
    inhibitory = excitatory.as_inhibitory()

    graph = NetworkGraph()
    graph.add_population("A", n, excitatory)
    graph.add_population("B", n, excitatory)
    for copy_index in range(len(layout.hidden)):
        graph.add_population(f"H{copy_index + 1}", n * n, excitatory)
    for copy_index in range(len(layout.shadows)):
        graph.add_population(f"H{copy_index + 1}_shadow", n * n, inhibitory)
    graph.add_population("C", 2 * n - 1, excitatory)
    for name in ("A", "B", "C"):
        graph.add_population(f"inh_{name}", 1, inhibitory)

    for neuron in layout.a:
        graph.add_source(neuron, weights.w_input)
    for neuron in layout.b:
        graph.add_source(neuron, weights.w_input)

    for copy_index, hidden in enumerate(layout.hidden):
        shadow = layout.shadows[copy_index] if layout.shadows else None
        for i in range(n):
            for j in range(n):
                h = layout.hidden_id(copy_index, i, j)
                graph.connect(layout.a.start + i, h, weights.w_ab_h, ROLE_A_TO_H)
                graph.connect(layout.b.start + j, h, weights.w_ab_h, ROLE_B_TO_H)
                graph.connect(h, layout.c.start + diag_index(i, j, n), weights.w_h_c, ROLE_H_TO_C)
                graph.connect(h, h, weights.w_self, ROLE_SELF)
                for x, y in _hidden_neighbours(i, j, n):
                    graph.connect(h, layout.hidden_id(copy_index, x, y), weights.w_lateral, ROLE_LATERAL)
                if shadow is not None:
                    graph.connect(h, shadow.start + (h - hidden.start), weights.w_h_shadow, ROLE_H_TO_SHADOW)
        if shadow is not None:
            for i in range(n):
                for j in range(n):
                    relay = shadow.start + i * n + j
                    for x, y in _shadow_targets(i, j, n):
                        graph.connect(relay, layout.hidden_id(copy_index, x, y), weights.w_shadow_inh, ROLE_SHADOW_INH)

    _connect_wta(graph, layout.a, layout.inhibitors["A"], weights, cfg.wta_sigma, lateral=False)
    _connect_wta(graph, layout.b, layout.inhibitors["B"], weights, cfg.wta_sigma, lateral=False)
    _connect_wta(graph, layout.c, layout.inhibitors["C"], weights, cfg.wta_sigma, lateral=True)

    graph.attributes["topology"] = cfg
    graph.attributes["layout"] = layout
    logger.info(
        f"Built threeway network n={n}: {graph.size} neurons, {len(graph.synapses)} synapses "
        f"(twin={cfg.twin_hidden}, shadow={cfg.shadow_inhibition})"
    )
    return graph


def _shadow_targets(i: int, j: int, n: int) -> List[Tuple[int, int]]:
    """Cells sharing the column, row or anti-diagonal of (i, j), excluding (i, j)."""

    cells = {(i, y) for y in range(n)} | {(x, j) for x in range(n)}
    cells |= {(x, i + j - x) for x in range(n) if 0 <= i + j - x < n}
    cells.discard((i, j))
    return sorted(cells)


def build_direction_neurons(graph: NetworkGraph, cfg: TopologyConfig) -> NetworkGraph:
    """Return a copy of ``graph`` with the four direction groups appended."""

    result = graph.copy()
    layout: PopulationLayout = graph.attributes["layout"]
    if layout.c.stop == 0:
        raise TopologyError("Direction neurons need an output population")
    weights = cfg.weight_table
    inhibitory = replace(cfg.neuron, is_inhibitory=True)
    clusters = direction_clusters(cfg.n)

    groups: Dict[str, range] = {}
    for name in DIRECTION_CLUSTERS:
        groups[name] = result.add_population(name, cfg.direction_group_size, inhibitory)

    for name, members in clusters.items():
        member_ids = {layout.c.start + index for index in members}
        for neuron in groups[name]:
            for target in sorted(member_ids):
                result.connect(target, neuron, weights.w_dir_exc, ROLE_DIR_EXC)
            for target in layout.c:
                if target not in member_ids:
                    result.connect(neuron, target, weights.w_dir_inh, ROLE_DIR_INH)

    result.attributes["layout"] = replace(layout, directions=groups)
    logger.info(f"Added {len(groups)} direction groups of {cfg.direction_group_size} neuron(s)")
    return result


def build_network(cfg: TopologyConfig) -> NetworkGraph:
    graph = build_threeway(cfg)
    if cfg.direction_neurons:
        graph = build_direction_neurons(graph, cfg)
    return graph


def inject_outlier(graph: NetworkGraph, cell: Tuple[int, int], gain: float = 3.0, copy_index: int = 0) -> NetworkGraph:
    """Return a copy where the A/B inputs of one hidden cell are scaled by ``gain``."""

    layout: PopulationLayout = graph.attributes["layout"]
    i, j = cell
    target = layout.hidden_id(copy_index, i, j)
    result = graph.copy()
    result.synapses = [
        replace(synapse, weight=synapse.weight * gain)
        if synapse.post == target and synapse.role in (ROLE_A_TO_H, ROLE_B_TO_H)
        else synapse
        for synapse in graph.synapses
    ]
    return result


def _violation(rule: str, neuron: Optional[int], detail: str) -> Dict[str, Any]:
    return {"rule": rule, "neuron": neuron, "detail": detail}


def validate_topology(graph: NetworkGraph) -> List[Dict[str, Any]]:
    """Check role degrees, diagonal wiring, signs and counts. Never raises."""

    violations: List[Dict[str, Any]] = []
    layout: Optional[PopulationLayout] = graph.attributes.get("layout")
    cfg: Optional[TopologyConfig] = graph.attributes.get("topology")
    if layout is None or cfg is None:
        return [_violation("layout", None, "graph carries no population layout")]

    size = graph.size
    for index, synapse in enumerate(graph.synapses):
        if not (0 <= synapse.pre < size and 0 <= synapse.post < size):
            violations.append(_violation("unknown_neuron", synapse.pre, f"synapse {index} leaves the network"))
            continue
        if not sign_consistent(synapse, graph.neurons):
            violations.append(
                _violation("sign", synapse.pre, f"synapse {index} ({synapse.role}) weight {synapse.weight}")
            )

    if size != layout.total:
        violations.append(_violation("count", None, f"network has {size} neurons, layout expects {layout.total}"))
    expected_sizes = {"A": cfg.n, "B": cfg.n, "C": 2 * cfg.n - 1}
    for name, expected in expected_sizes.items():
        actual = len(graph.populations.get(name, range(0)))
        if actual != expected:
            violations.append(_violation("count", None, f"population {name} has {actual} neurons, expected {expected}"))

    hidden_ids = {neuron for ids in layout.hidden for neuron in ids}
    incoming: Dict[Tuple[int, str], int] = {}
    outgoing: Dict[Tuple[int, str], List[int]] = {}
    for synapse in graph.synapses:
        if synapse.post in hidden_ids:
            key = (synapse.post, synapse.role)
            incoming[key] = incoming.get(key, 0) + 1
        if synapse.pre in hidden_ids:
            outgoing.setdefault((synapse.pre, synapse.role), []).append(synapse.post)

    n = cfg.n
    for copy_index, ids in enumerate(layout.hidden):
        for neuron in ids:
            _, i, j = layout.hidden_cell(neuron)
            for role in (ROLE_A_TO_H, ROLE_B_TO_H):
                count = incoming.get((neuron, role), 0)
                if count != 1:
                    violations.append(_violation("degree", neuron, f"{role} fan-in {count}, expected 1"))
            expected_c = layout.c.start + diag_index(i, j, n)
            c_targets = outgoing.get((neuron, ROLE_H_TO_C), [])
            if c_targets != [expected_c]:
                violations.append(
                    _violation("diagonal_fan_in", neuron, f"cell ({i}, {j}) projects to {c_targets}, expected [{expected_c}]")
                )
            self_targets = outgoing.get((neuron, ROLE_SELF), [])
            if self_targets != [neuron]:
                violations.append(_violation("degree", neuron, f"self connections {self_targets}"))
            laterals = outgoing.get((neuron, ROLE_LATERAL), [])
            if len(laterals) > 3:
                violations.append(_violation("degree", neuron, f"{len(laterals)} lateral connections, at most 3"))
            if layout.shadows:
                partner = layout.shadows[copy_index].start + (neuron - ids.start)
                shadow_targets = outgoing.get((neuron, ROLE_H_TO_SHADOW), [])
                if shadow_targets != [partner]:
                    violations.append(_violation("degree", neuron, f"shadow partner {shadow_targets}, expected [{partner}]"))
    return violations


def topology_dump(graph: NetworkGraph) -> Dict[str, Any]:
    labels = graph.neuron_labels()
    neurons = [
        {"id": index, "population": str(labels[index]), "inhibitory": params.is_inhibitory}
        for index, params in enumerate(graph.neurons)
    ]
    edges = [
        {"pre": synapse.pre, "post": synapse.post, "weight": synapse.weight, "role": synapse.role}
        for synapse in graph.synapses
    ]
    role_counts: Dict[str, int] = {}
    for synapse in graph.synapses:
        role_counts[synapse.role] = role_counts.get(synapse.role, 0) + 1
    return {
        "populations": {name: [ids.start, ids.stop] for name, ids in graph.populations.items()},
        "role_counts": dict(sorted(role_counts.items())),
        "neurons": neurons,
        "edges": edges,
    }


def dump_topology(graph: NetworkGraph, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(topology_dump(graph), indent=2), encoding="utf-8")
    return path
