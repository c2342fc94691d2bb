"""Shared exception types. Each maps to one failure class named in the API contracts."""


class ZeusError(Exception):
    """Base class for all package errors."""


class ShapeError(ZeusError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(ZeusError, ValueError):
    """A configuration violates one of its invariants."""


class InputError(ZeusError, ValueError):
    """An input value fails a precondition (empty string, out-of-range, ...)."""


class ResolutionError(InputError):
    """Image resolution does not match the encoder input size; caller must resize."""


class BackendError(ZeusError, RuntimeError):
    """A language-model backend failed (HTTP error, timeout, empty completion)."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class TrainingError(ZeusError, RuntimeError):
    """A training run hit a fatal condition (NaN loss, incompatible checkpoint)."""


class FrozenDriftError(TrainingError):
    """A frozen module's weights changed during training."""
