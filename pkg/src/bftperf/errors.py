"""Exception types shared by the Python engine and the compiled kernel."""


class ConfigError(ValueError):
    """Invalid simulation or model parameters."""


class SimulationError(RuntimeError):
    pass


class PastEventError(SimulationError):
    """An event was scheduled before the current clock (engine bug)."""


class LivelockError(SimulationError):
    """No consensus instance completed within the configured horizon."""


class ProtocolError(SimulationError):
    """A state machine received something it cannot handle."""
