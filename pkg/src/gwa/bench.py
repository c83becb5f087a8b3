"""Ingestion throughput benchmark comparing kernel backends."""

from __future__ import annotations

import io
import time

import numpy as np

from . import _kernels
from .alignment import HeadSnapshot
from .ingest import ingest_stream
from .trace import TraceHeader, TraceWriter, stable_softmax


def build_synthetic_trace(
    samples: int = 100_000, dim: int = 512, classes: int = 10, batch: int = 512, seed: int = 0
) -> bytes:
    """One-epoch trace with per-step weight drift (no dedup shortcuts)."""
    rng = np.random.default_rng(seed)
    steps = max(1, samples // batch)
    weights = rng.standard_normal((classes, dim)).astype(np.float32)
    header = TraceHeader(
        latent_dim=dim,
        num_classes=classes,
        dataset_size=steps * batch,
        batch_size=batch,
        steps_per_epoch=steps,
    )
    buf = io.BytesIO()
    writer = TraceWriter(buf, header)
    latents = rng.standard_normal((batch, dim)).astype(np.float32)
    probs = stable_softmax(
        latents.astype(np.float64) @ weights.astype(np.float64).T
    ).astype(np.float32)
    labels = rng.integers(0, classes, batch).astype(np.uint32)
    for step in range(steps):
        ids = np.arange(step * batch, (step + 1) * batch, dtype=np.uint64)
        writer.write_step(0, step, weights, None, ids, latents, probs, labels)
        weights = (weights + 0.001).astype(np.float32)
    return buf.getvalue()


def time_ingest(raw: bytes, repeats: int = 3) -> float:
    """Best-of-N samples/s for a full ingest of the trace bytes."""
    header = TraceHeader.unpack(raw[:32])
    n = header.steps_per_epoch * header.batch_size
    best = 0.0
    for _ in range(repeats):
        t0 = time.perf_counter()
        ingest_stream(io.BytesIO(raw))
        best = max(best, n / (time.perf_counter() - t0))
    return best


def time_kernel(backend, samples: int, dim: int, classes: int, repeats: int = 3) -> float:
    """Best-of-N samples/s for the bare alignment kernel."""
    rng = np.random.default_rng(1)
    latents = rng.standard_normal((samples, dim)).astype(np.float32)
    weights = rng.standard_normal((classes, dim)).astype(np.float32)
    probs = rng.dirichlet(np.ones(classes), size=samples).astype(np.float32)
    labels = rng.integers(0, classes, samples).astype(np.uint32)
    bias = np.zeros(classes, dtype=np.float32)
    snapshot = HeadSnapshot(weights=weights)
    w_norm = snapshot.frobenius_norm()
    best = 0.0
    for _ in range(repeats):
        t0 = time.perf_counter()
        backend.alignment_batch(latents, probs, labels, weights, bias, False, w_norm, 1e-12 * w_norm)
        best = max(best, samples / (time.perf_counter() - t0))
    return best


def run(samples: int = 100_000, dim: int = 512, classes: int = 10, batch: int = 512) -> dict:
    """Compare the active pipeline and both kernel backends; returns rates."""
    raw = build_synthetic_trace(samples=samples, dim=dim, classes=classes, batch=batch)
    out = {
        "config": {"samples": samples, "dim": dim, "classes": classes, "batch": batch},
        "active_backend": _kernels.backend_name(),
        "ingest_samples_per_s": time_ingest(raw),
        "kernel_samples_per_s": {},
    }
    from ._kernels import fallback

    out["kernel_samples_per_s"]["python"] = time_kernel(fallback, min(samples, 65536), dim, classes)
    if _kernels.HAVE_COMPILED:
        from ._kernels import _core

        out["kernel_samples_per_s"]["compiled"] = time_kernel(
            _core, min(samples, 65536), dim, classes
        )
    return out
