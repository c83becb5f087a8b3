"""Telemetry trace emitter.

Writes the binary trace format consumed by the gwa engine, using only the
standard library. The client performs no alignment math; it serializes
what the training loop hands it.

Format (little-endian throughout):

    header (32 bytes): magic b"GWAT", version u16 = 1,
        flags u16 (bit 0 bias present, bit 1 probs are logits),
        D u32, C u32, N u64, b u32, K u32
    step record: epoch u32, step u32, n u32, wtag u8, whash u64,
        [wtag 0] weights C*D f32 (+ bias C f32 when flagged),
        n * { sample_id u64, latent D f32, probs C f32, label u32 }

wtag 1 marks a weight section identical to the previous step's; whash is
the first 8 bytes (as LE u64) of SHA-256 over the float32 weight bytes
followed by the bias bytes when present.

Arrays are accepted either as objects exposing a C-contiguous float32
buffer (numpy arrays pass through untouched) or as plain (nested)
sequences of numbers, which are packed to float32.
"""

from __future__ import annotations

import hashlib
import math
import struct
import sys
from typing import BinaryIO, Optional, Sequence

MAGIC = b"GWAT"
VERSION = 1
FLAG_BIAS = 1 << 0
FLAG_LOGITS = 1 << 1

_HEADER = struct.Struct("<4sHHIIQII")
_PRELUDE = struct.Struct("<IIIBQ")

WTAG_FULL = 0
WTAG_SAME_AS_PREVIOUS = 1


class EmitterError(Exception):
    """Base class for emitter failures."""


class ShapeMismatch(EmitterError, ValueError):
    """Array dimensions disagree with the session header."""


class NonMonotonicStep(EmitterError, ValueError):
    """(epoch, step) did not strictly increase."""


class SessionClosed(EmitterError, RuntimeError):
    """The session was already closed."""


def _flatten(data) -> list:
    if hasattr(data, "__len__") and len(data) and hasattr(data[0], "__len__"):
        out = []
        for row in data:
            out.extend(row)
        return out
    return list(data)


def _buffer_bytes(data, format_char: str) -> Optional[bytes]:
    """Zero-copy path for C-contiguous little-endian buffers."""
    if sys.byteorder != "little":
        return None
    try:
        mv = memoryview(data)
    except TypeError:
        return None
    if mv.format == format_char and mv.c_contiguous:
        return mv.tobytes()
    return None


def _f32_bytes(data, count: int, what: str) -> bytes:
    raw = _buffer_bytes(data, "f")
    if raw is None:
        flat = _flatten(data)
        if len(flat) != count:
            raise ShapeMismatch(f"{what}: expected {count} values, got {len(flat)}")
        return struct.pack(f"<{count}f", *flat)
    if len(raw) != 4 * count:
        raise ShapeMismatch(f"{what}: expected {count} float32 values")
    return raw


def softmax(logits: Sequence[float]) -> list[float]:
    """Reference softmax with max subtraction, matching the engine's."""
    m = max(logits)
    exps = [math.exp(x - m) for x in logits]
    total = sum(exps)
    return [e / total for e in exps]


class EmitterSession:
    """One writer per trace; not safe for concurrent emit_step calls.

    Step bytes are buffered and flushed to the sink at epoch boundaries
    and on close, so a crash leaves the file ending at a clean epoch.
    """

    def __init__(
        self,
        sink: BinaryIO,
        d: int,
        c: int,
        dataset_size: int,
        batch_size: int,
        steps_per_epoch: int,
        bias: bool = False,
        logits: bool = False,
    ):
        for name, value in (
            ("d", d), ("c", c), ("batch_size", batch_size), ("steps_per_epoch", steps_per_epoch)
        ):
            if value <= 0:
                raise ValueError(f"{name} must be positive")
        self._sink = sink
        self.d = d
        self.c = c
        self.batch_size = batch_size
        self.bias_present = bias
        self.probs_are_logits = logits
        self._closed = False
        self._last_pos: Optional[tuple[int, int]] = None
        self._last_hash: Optional[int] = None
        self._buffer = bytearray()
        self._buffered_epoch: Optional[int] = None
        flags = (FLAG_BIAS if bias else 0) | (FLAG_LOGITS if logits else 0)
        sink.write(
            _HEADER.pack(MAGIC, VERSION, flags, d, c, dataset_size, batch_size, steps_per_epoch)
        )
        sink.flush()

    # -- lifecycle --

    def __enter__(self) -> "EmitterSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        if self._closed:
            raise SessionClosed("session already closed")
        self._flush_buffer()
        self._sink.flush()
        self._closed = True

    def _check_open(self) -> None:
        if self._closed:
            raise SessionClosed("emit_step on a closed session")

    def _flush_buffer(self) -> None:
        if self._buffer:
            self._sink.write(bytes(self._buffer))
            self._sink.flush()
            self._buffer.clear()

    # -- emission --

    def emit_step(
        self,
        epoch: int,
        step: int,
        weights,
        bias,
        latents,
        probs_or_logits,
        labels,
        sample_ids,
    ) -> None:
        """Append one step record; weight sections deduplicate by content."""
        self._check_open()
        if self._last_pos is not None and (epoch, step) <= self._last_pos:
            raise NonMonotonicStep(f"step ({epoch}, {step}) does not follow {self._last_pos}")

        n = len(sample_ids)
        if n > self.batch_size:
            raise ShapeMismatch(f"batch count {n} exceeds declared batch size {self.batch_size}")
        if len(labels) != n or len(latents) != n or len(probs_or_logits) != n:
            raise ShapeMismatch(
                f"batch arrays disagree: {n} ids, {len(latents)} latents, "
                f"{len(probs_or_logits)} prob rows, {len(labels)} labels"
            )
        for label in labels:
            if not 0 <= int(label) < self.c:
                raise ShapeMismatch(f"label {label} out of range for {self.c} classes")

        weight_bytes = _f32_bytes(weights, self.c * self.d, "weights")
        bias_bytes = b""
        if self.bias_present:
            if bias is None:
                raise ShapeMismatch("session declares bias but none was given")
            bias_bytes = _f32_bytes(bias, self.c, "bias")
        elif bias is not None:
            raise ShapeMismatch("session declares no bias but one was given")

        digest = hashlib.sha256(weight_bytes + bias_bytes).digest()
        whash = int.from_bytes(digest[:8], "little")
        reuse = whash == self._last_hash
        self._last_hash = whash

        if self._buffered_epoch is not None and epoch != self._buffered_epoch:
            self._flush_buffer()
        self._buffered_epoch = epoch
        self._last_pos = (epoch, step)

        out = self._buffer
        out += _PRELUDE.pack(
            epoch, step, n, WTAG_SAME_AS_PREVIOUS if reuse else WTAG_FULL, whash
        )
        if not reuse:
            out += weight_bytes
            if self.bias_present:
                out += bias_bytes

        latent_rows = [_f32_bytes(row, self.d, "latent") for row in latents]
        prob_rows = [_f32_bytes(row, self.c, "probs") for row in probs_or_logits]
        for sid, latent, probs, label in zip(sample_ids, latent_rows, prob_rows, labels):
            out += struct.pack("<Q", int(sid))
            out += latent
            out += probs
            out += struct.pack("<I", int(label))


def open(  # noqa: A001 - the format's session constructor is called open
    sink: BinaryIO,
    d: int,
    c: int,
    dataset_size: int,
    batch_size: int,
    steps_per_epoch: int,
    bias: bool = False,
    logits: bool = False,
) -> EmitterSession:
    """Start a session: writes the header immediately, once."""
    return EmitterSession(
        sink,
        d=d,
        c=c,
        dataset_size=dataset_size,
        batch_size=batch_size,
        steps_per_epoch=steps_per_epoch,
        bias=bias,
        logits=logits,
    )
