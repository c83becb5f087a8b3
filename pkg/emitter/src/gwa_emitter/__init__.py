"""Zero-dependency telemetry trace emitter for the gwa engine."""

from .session import (
    EmitterError,
    EmitterSession,
    NonMonotonicStep,
    SessionClosed,
    ShapeMismatch,
    open,
    softmax,
)

__version__ = "0.1.0"

__all__ = [
    "EmitterError",
    "EmitterSession",
    "NonMonotonicStep",
    "SessionClosed",
    "ShapeMismatch",
    "open",
    "softmax",
]
