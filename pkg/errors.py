"""Exception types shared by the simulator, the codec and the experiment harness."""


class ConfigurationError(ValueError):
    """A parameter set violates one of its invariants."""


class TopologyError(ValueError):
    """A network graph references unknown neurons or carries inconsistent signs."""


class SimulationError(ValueError):
    """The simulator was driven out of its contract (bad ids, skipped steps)."""


class EncodingRangeError(ValueError):
    """A value handed to the population encoder lies outside [0, 1]."""


class TraceOrderError(ValueError):
    """Spikes were delivered to a trace out of time order."""


class MetricWindowError(ValueError):
    """A metric window extends beyond the recorded trajectory."""
