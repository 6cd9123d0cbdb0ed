"""
Project exceptions.

Bad input raises ValueError; ConsistencyError covers state the engine itself produced.
"""


class ConsistencyError(RuntimeError):
    """Engine state violated an invariant (conservation, single copy, queue placement)."""


class ProtocolViolationError(ConsistencyError):
    """Simultaneously enabled transmissions interfere under the protocol model."""

    def __init__(self, message: str, violations: list[tuple[int, int, float]]):
        super().__init__(message)
        self.violations = violations


class ConfigError(ValueError):
    """Experiment configuration could not be read or failed validation."""
