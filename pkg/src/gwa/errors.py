"""Exception types shared across the engine.

Names mirror the failure they signal; all inherit from GwaError so callers
can catch engine failures with one clause.
"""


class GwaError(Exception):
    """Base class for all engine errors."""


class DimensionMismatch(GwaError, ValueError):
    """Array lengths or shapes disagree with the declared dimensions."""


class DegenerateWeights(GwaError, ValueError):
    """Head weight matrix has (near-)zero Frobenius norm; alignment undefined."""


class ZeroGradient(GwaError, ValueError):
    """Pairwise alignment requested for a sample whose gradient vanishes."""


class EpochMismatch(GwaError, ValueError):
    """Score or distribution belongs to a different epoch than the target."""


class Unstable(GwaError, ArithmeticError):
    """GWA denominator is too close to zero for a meaningful value."""


class TooFewSamples(GwaError, ValueError):
    """Too few defined scores for fourth-moment statistics."""


class MomentMismatch(GwaError, AssertionError):
    """Streaming moments disagree with the store-then-compute cross-check."""


class AllEpochsExcluded(GwaError, ValueError):
    """No epoch survives warmup masking and stability filtering."""


class LengthMismatch(GwaError, ValueError):
    """Per-epoch prediction vectors are not aligned in length."""


# --- trace format errors ---


class TraceError(GwaError):
    """Base class for telemetry trace format errors."""


class BadMagic(TraceError):
    """Stream does not start with the trace magic bytes."""


class VersionUnsupported(TraceError):
    """Trace was written with an unknown format version."""


class TruncatedRecord(TraceError):
    """Stream ended mid-record. Carries the byte offset of the partial read."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CorruptRecord(TraceError):
    """Record framing is intact but its content is inconsistent."""


class NonMonotonicStep(TraceError):
    """(epoch, step) did not strictly increase along the trace."""


# --- harness errors ---


class DatasetLoad(GwaError, ValueError):
    """Dataset could not be generated or read."""


class NonFiniteLoss(GwaError, ArithmeticError):
    """Training loss became NaN/inf. Carries the offending epoch."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class TraceMissing(GwaError, FileNotFoundError):
    """Per-sample alignment retention was not enabled or file is absent."""
