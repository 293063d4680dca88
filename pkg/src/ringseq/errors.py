"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible or invalid shapes."""


class ConfigError(ValueError):
    """A configuration value is out of range or violates a divisibility rule."""


class NumericError(ValueError):
    """An operation received non-finite input."""


class ProtocolError(RuntimeError):
    """Devices disagreed about a collective (shape mismatch, bad participation)."""


class DeadlockError(ProtocolError):
    """No simulated device can make progress."""


class StateError(RuntimeError):
    """A call is missing saved state it depends on."""
