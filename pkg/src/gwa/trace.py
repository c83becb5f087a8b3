"""Binary telemetry trace format: header, step records, reader and writer.

Layout (all little-endian):

    header (32 bytes):
        magic    4s   = b"GWAT"
        version  u16  = 1
        flags    u16  bit 0: bias_present, bit 1: probs_are_logits
        D        u32  latent dimension
        C        u32  class count
        N        u64  dataset size
        b        u32  batch size
        K        u32  steps per epoch

    step record:
        epoch u32, step u32, n u32 (batch count <= b)
        wtag  u8   0 = full weight section follows, 1 = same_as_previous
        whash u64  content hash of the weight section (both tags)
        [wtag 0] weights C*D f32 row-major, then bias C f32 if bias_present
        n * { sample_id u64, latent D f32, probs C f32, label u32 }

The weight hash is the first 8 bytes (as little-endian u64) of SHA-256 over
the raw float32 weight bytes followed by the bias bytes when present.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterator, Optional

import numpy as np

from .alignment import HeadSnapshot
from .errors import (
    BadMagic,
    CorruptRecord,
    DimensionMismatch,
    NonMonotonicStep,
    TruncatedRecord,
    VersionUnsupported,
)

MAGIC = b"GWAT"
VERSION = 1
FLAG_BIAS = 1 << 0
FLAG_LOGITS = 1 << 1

HEADER_STRUCT = struct.Struct("<4sHHIIQII")
STEP_PRELUDE_STRUCT = struct.Struct("<IIIBQ")

WTAG_FULL = 0
WTAG_SAME_AS_PREVIOUS = 1


def weight_hash(weights: np.ndarray, bias: Optional[np.ndarray] = None) -> int:
    """Content hash of a weight section, used for snapshot deduplication."""
    h = hashlib.sha256(np.ascontiguousarray(weights, dtype="<f4").tobytes())
    if bias is not None:
        h.update(np.ascontiguousarray(bias, dtype="<f4").tobytes())
    return int.from_bytes(h.digest()[:8], "little")


@dataclass(frozen=True)
class TraceHeader:
    latent_dim: int
    num_classes: int
    dataset_size: int
    batch_size: int
    steps_per_epoch: int
    bias_present: bool = False
    probs_are_logits: bool = False

    def __post_init__(self) -> None:
        for name in ("latent_dim", "num_classes", "batch_size", "steps_per_epoch"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def pack(self) -> bytes:
        flags = (FLAG_BIAS if self.bias_present else 0) | (
            FLAG_LOGITS if self.probs_are_logits else 0
        )
        return HEADER_STRUCT.pack(
            MAGIC,
            VERSION,
            flags,
            self.latent_dim,
            self.num_classes,
            self.dataset_size,
            self.batch_size,
            self.steps_per_epoch,
        )

    @classmethod
    def unpack(cls, raw: bytes) -> "TraceHeader":
        magic, version, flags, d, c, n, b, k = HEADER_STRUCT.unpack(raw)
        if magic != MAGIC:
            raise BadMagic(f"expected {MAGIC!r}, got {magic!r}")
        if version != VERSION:
            raise VersionUnsupported(f"trace version {version}, reader supports {VERSION}")
        return cls(
            latent_dim=d,
            num_classes=c,
            dataset_size=n,
            batch_size=b,
            steps_per_epoch=k,
            bias_present=bool(flags & FLAG_BIAS),
            probs_are_logits=bool(flags & FLAG_LOGITS),
        )

    def sample_dtype(self) -> np.dtype:
        return np.dtype(
            [
                ("sample_id", "<u8"),
                ("latent", "<f4", (self.latent_dim,)),
                ("probs", "<f4", (self.num_classes,)),
                ("label", "<u4"),
            ]
        )


@dataclass
class StepRecord:
    """One parsed step: snapshot (possibly inherited) plus the batch arrays."""

    epoch: int
    step: int
    snapshot: HeadSnapshot
    sample_ids: np.ndarray
    latents: np.ndarray
    probs: np.ndarray
    labels: np.ndarray
    weights_reused: bool = False


class TraceWriter:
    """Engine-native writer; emits the byte format defined above."""

    def __init__(self, sink: BinaryIO, header: TraceHeader):
        self._sink = sink
        self.header = header
        self._last_hash: Optional[int] = None
        self._last_pos: Optional[tuple[int, int]] = None
        sink.write(header.pack())

    def write_step(
        self,
        epoch: int,
        step: int,
        weights: np.ndarray,
        bias: Optional[np.ndarray],
        sample_ids: np.ndarray,
        latents: np.ndarray,
        probs: np.ndarray,
        labels: np.ndarray,
    ) -> None:
        h = self.header
        n = len(sample_ids)
        if n > h.batch_size:
            raise DimensionMismatch(f"batch count {n} exceeds header b={h.batch_size}")
        weights = np.ascontiguousarray(weights, dtype="<f4")
        if weights.shape != (h.num_classes, h.latent_dim):
            raise DimensionMismatch(
                f"weights shape {weights.shape} != ({h.num_classes}, {h.latent_dim})"
            )
        if h.bias_present:
            if bias is None:
                raise DimensionMismatch("header declares bias but none was given")
            bias = np.ascontiguousarray(bias, dtype="<f4")
            if bias.shape != (h.num_classes,):
                raise DimensionMismatch(f"bias shape {bias.shape} != ({h.num_classes},)")
        if self._last_pos is not None and (epoch, step) <= self._last_pos:
            raise NonMonotonicStep(
                f"step ({epoch}, {step}) does not follow {self._last_pos}"
            )
        self._last_pos = (epoch, step)

        whash = weight_hash(weights, bias if h.bias_present else None)
        reuse = whash == self._last_hash
        self._last_hash = whash
        tag = WTAG_SAME_AS_PREVIOUS if reuse else WTAG_FULL
        self._sink.write(STEP_PRELUDE_STRUCT.pack(epoch, step, n, tag, whash))
        if not reuse:
            self._sink.write(weights.tobytes())
            if h.bias_present:
                self._sink.write(bias.tobytes())

        batch = np.empty(n, dtype=h.sample_dtype())
        batch["sample_id"] = np.asarray(sample_ids, dtype=np.uint64)
        batch["latent"] = np.ascontiguousarray(latents, dtype=np.float32)
        batch["probs"] = np.ascontiguousarray(probs, dtype=np.float32)
        batch["label"] = np.asarray(labels, dtype=np.uint32)
        self._sink.write(batch.tobytes())

    def flush(self) -> None:
        self._sink.flush()


class TraceReader:
    """Streaming parser; yields StepRecords and enforces framing invariants."""

    def __init__(self, source: BinaryIO):
        self._source = source
        self._offset = 0
        raw = self._read_exact(HEADER_STRUCT.size, "header")
        self.header = TraceHeader.unpack(raw)
        self._sample_dtype = self.header.sample_dtype()
        self._last_pos: Optional[tuple[int, int]] = None
        self._last_snapshot: Optional[HeadSnapshot] = None

    def _read_exact(self, size: int, what: str) -> bytes:
        chunks = []
        remaining = size
        while remaining:
            chunk = self._source.read(remaining)
            if not chunk:
                raise TruncatedRecord(f"stream ended inside {what}", self._offset)
            chunks.append(chunk)
            remaining -= len(chunk)
            self._offset += len(chunk)
        return b"".join(chunks)

    def __iter__(self) -> Iterator[StepRecord]:
        h = self.header
        wbytes = 4 * h.num_classes * h.latent_dim
        bbytes = 4 * h.num_classes if h.bias_present else 0
        while True:
            first = self._source.read(1)
            if not first:
                return
            self._offset += 1
            prelude = first + self._read_exact(
                STEP_PRELUDE_STRUCT.size - 1, "step prelude"
            )
            epoch, step, n, wtag, whash = STEP_PRELUDE_STRUCT.unpack(prelude)
            if n > h.batch_size:
                raise DimensionMismatch(
                    f"step ({epoch}, {step}) batch count {n} exceeds header "
                    f"b={h.batch_size}"
                )
            if self._last_pos is not None and (epoch, step) <= self._last_pos:
                raise NonMonotonicStep(
                    f"step ({epoch}, {step}) does not follow {self._last_pos}"
                )
            self._last_pos = (epoch, step)

            if wtag == WTAG_FULL:
                raw = self._read_exact(wbytes, "weight section")
                weights = (
                    np.frombuffer(raw, dtype="<f4")
                    .reshape(h.num_classes, h.latent_dim)
                    .copy()
                )
                bias = None
                if h.bias_present:
                    bias = np.frombuffer(
                        self._read_exact(bbytes, "bias section"), dtype="<f4"
                    ).copy()
                if weight_hash(weights, bias) != whash:
                    raise CorruptRecord(
                        f"step ({epoch}, {step}) weight hash does not match content"
                    )
                snapshot = HeadSnapshot(
                    weights=weights, bias=bias, epoch=epoch, step=step, weight_hash=whash
                )
                reused = False
            elif wtag == WTAG_SAME_AS_PREVIOUS:
                prev = self._last_snapshot
                if prev is None:
                    raise CorruptRecord("same_as_previous marker with no prior snapshot")
                if whash != prev.weight_hash:
                    raise CorruptRecord(
                        f"step ({epoch}, {step}) reuse hash {whash:#x} != previous "
                        f"{prev.weight_hash:#x}"
                    )
                snapshot = HeadSnapshot(
                    weights=prev.weights,
                    bias=prev.bias,
                    epoch=epoch,
                    step=step,
                    weight_hash=whash,
                )
                reused = True
            else:
                raise CorruptRecord(f"unknown weight section tag {wtag}")
            self._last_snapshot = snapshot

            raw = self._read_exact(n * self._sample_dtype.itemsize, "sample block")
            batch = np.frombuffer(raw, dtype=self._sample_dtype)
            labels = batch["label"]
            if labels.size and labels.max() >= h.num_classes:
                raise CorruptRecord(
                    f"step ({epoch}, {step}) label {labels.max()} out of range"
                )
            yield StepRecord(
                epoch=epoch,
                step=step,
                snapshot=snapshot,
                sample_ids=batch["sample_id"],
                latents=np.ascontiguousarray(batch["latent"]),
                probs=np.ascontiguousarray(batch["probs"]),
                labels=np.ascontiguousarray(labels),
                weights_reused=reused,
            )


def stable_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction, float64 accumulation."""
    x = logits.astype(np.float64)
    x -= x.max(axis=-1, keepdims=True)
    np.exp(x, out=x)
    x /= x.sum(axis=-1, keepdims=True)
    return x
