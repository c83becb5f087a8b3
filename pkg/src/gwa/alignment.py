"""Closed-form per-sample head gradients and their cosine against the head.

For softmax cross-entropy the negative loss gradient restricted to the
classifier head factors as g = a z^T with residual a = onehot(label) - probs
and latent z. Every quantity here exploits that rank-1 structure, so the
C x D gradient matrix is never materialized:

    |g|_F            = |a| |z|
    cos(g, W)        = a.(W z) / (|a| |z| |W|_F)
    cos(g_1, g_2)    = (z_1.z_2)(a_1.a_2) / (|z_1||z_2||a_1||a_2|)

With include_bias, z is augmented with a constant-1 coordinate and the bias
column joins W, which keeps all three identities exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .errors import DegenerateWeights, DimensionMismatch, ZeroGradient

# gradient norms below ZERO_GRAD_REL * |W|_F make the cosine undefined
ZERO_GRAD_REL = 1e-12
# head weight matrices with Frobenius norm below this are corrupt
WEIGHT_NORM_FLOOR = 1e-12
# cosine may exceed [-1, 1] by at most this before clamping
CLAMP_TOL = 1e-9

PROBS_SUM_TOL = 1e-5


@dataclass
class SampleRecord:
    """One sample's telemetry at a step: latent, softmax output, label."""

    sample_id: int
    latent: np.ndarray
    probs: np.ndarray
    label: int

    def __post_init__(self) -> None:
        self.latent = np.ascontiguousarray(self.latent, dtype=np.float32)
        self.probs = np.ascontiguousarray(self.probs, dtype=np.float32)
        if self.latent.ndim != 1 or self.probs.ndim != 1:
            raise DimensionMismatch("latent and probs must be 1-D vectors")
        if not 0 <= self.label < self.probs.shape[0]:
            raise DimensionMismatch(
                f"label {self.label} out of range for {self.probs.shape[0]} classes"
            )
        p64 = self.probs.astype(np.float64)
        if p64.min() < -PROBS_SUM_TOL or p64.max() > 1 + PROBS_SUM_TOL:
            raise ValueError("probs entries must lie in [0, 1]")
        if abs(p64.sum() - 1.0) > PROBS_SUM_TOL:
            raise ValueError(f"probs must sum to 1 within {PROBS_SUM_TOL}")


@dataclass
class HeadSnapshot:
    """Classifier head weights (and optional bias) at one (epoch, step)."""

    weights: np.ndarray
    bias: Optional[np.ndarray] = None
    epoch: int = 0
    step: int = 0
    weight_hash: Optional[int] = None

    def __post_init__(self) -> None:
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float32)
        if self.weights.ndim != 2:
            raise DimensionMismatch("weights must be a C x D matrix")
        if self.bias is not None:
            self.bias = np.ascontiguousarray(self.bias, dtype=np.float32)
            if self.bias.shape != (self.weights.shape[0],):
                raise DimensionMismatch(
                    f"bias shape {self.bias.shape} does not match "
                    f"{self.weights.shape[0]} classes"
                )

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.weights.shape[1]

    def frobenius_norm(self, include_bias: bool = False) -> float:
        w64 = self.weights.astype(np.float64)
        sq = float(np.einsum("ij,ij->", w64, w64))
        if include_bias:
            b64 = self.bias.astype(np.float64)
            sq += float(b64 @ b64)
        return math.sqrt(sq)


@dataclass
class AlignmentScore:
    """One per-sample alignment value; gamma is None when undefined."""

    sample_id: int
    epoch: int
    step: int
    gamma: Optional[float]
    grad_norm: float

    @property
    def defined(self) -> bool:
        return self.gamma is not None


def _check_dims(record: SampleRecord, snapshot: HeadSnapshot) -> None:
    if record.latent.shape[0] != snapshot.latent_dim:
        raise DimensionMismatch(
            f"latent length {record.latent.shape[0]} != head D {snapshot.latent_dim}"
        )
    if record.probs.shape[0] != snapshot.num_classes:
        raise DimensionMismatch(
            f"probs length {record.probs.shape[0]} != head C {snapshot.num_classes}"
        )


def _residual(probs: np.ndarray, label: int) -> np.ndarray:
    a = -probs.astype(np.float64)
    a[label] += 1.0
    return a


def head_gradient(
    record: SampleRecord,
    snapshot: HeadSnapshot,
    include_bias: bool = False,
) -> tuple[np.ndarray, float]:
    """Residual a = onehot(label) - probs and the Frobenius norm |a||z|."""
    _check_dims(record, snapshot)
    if include_bias and snapshot.bias is None:
        raise DimensionMismatch("include_bias=True but snapshot carries no bias")
    a = _residual(record.probs, record.label)
    z_sq = float(record.latent.astype(np.float64) @ record.latent.astype(np.float64))
    if include_bias:
        z_sq += 1.0
    grad_norm = math.sqrt(float(a @ a) * z_sq)
    return a, grad_norm


def compute_alignment_batch(
    latents: np.ndarray,
    probs: np.ndarray,
    labels: np.ndarray,
    snapshot: HeadSnapshot,
    include_bias: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized alignment of a batch against one head snapshot.

    Returns float64 (gamma, grad_norm) arrays; gamma is NaN where the
    per-sample gradient norm is below the zero threshold.
    """
    latents = np.ascontiguousarray(latents, dtype=np.float32)
    probs = np.ascontiguousarray(probs, dtype=np.float32)
    labels = np.ascontiguousarray(labels, dtype=np.uint32)
    if latents.shape[1] != snapshot.latent_dim or probs.shape[1] != snapshot.num_classes:
        raise DimensionMismatch(
            f"batch dims ({latents.shape[1]}, {probs.shape[1]}) != head "
            f"({snapshot.latent_dim}, {snapshot.num_classes})"
        )
    if include_bias and snapshot.bias is None:
        raise DimensionMismatch("include_bias=True but snapshot carries no bias")
    w_norm = snapshot.frobenius_norm(include_bias=include_bias)
    if w_norm < WEIGHT_NORM_FLOOR:
        raise DegenerateWeights(
            f"head Frobenius norm {w_norm!r} below {WEIGHT_NORM_FLOOR}"
        )
    bias = snapshot.bias
    if bias is None:
        bias = np.zeros(snapshot.num_classes, dtype=np.float32)
    return _kernels.alignment_batch(
        latents,
        probs,
        labels,
        snapshot.weights,
        np.ascontiguousarray(bias, dtype=np.float32),
        include_bias,
        w_norm,
        ZERO_GRAD_REL * w_norm,
    )


def alignment(
    record: SampleRecord,
    snapshot: HeadSnapshot,
    include_bias: bool = False,
) -> AlignmentScore:
    """Cosine between the sample's negative head gradient and the head weights.

    Undefined (gamma None) when the gradient norm falls below
    ZERO_GRAD_REL * |W|_F; the norm itself is still reported.
    """
    _check_dims(record, snapshot)
    gamma, grad_norm = compute_alignment_batch(
        record.latent[None, :],
        record.probs[None, :],
        np.asarray([record.label]),
        snapshot,
        include_bias=include_bias,
    )
    g = float(gamma[0])
    return AlignmentScore(
        sample_id=record.sample_id,
        epoch=snapshot.epoch,
        step=snapshot.step,
        gamma=None if math.isnan(g) else g,
        grad_norm=float(grad_norm[0]),
    )


def pairwise_alignment(
    a: SampleRecord,
    b: SampleRecord,
    include_bias: bool = False,
) -> float:
    """Cosine between two samples' head gradients via the rank-1 identity."""
    if a.latent.shape != b.latent.shape or a.probs.shape != b.probs.shape:
        raise DimensionMismatch("records must share latent and class dimensions")
    res = []
    for rec in (a, b):
        av = _residual(rec.probs, rec.label)
        zv = rec.latent.astype(np.float64)
        z_sq = float(zv @ zv) + (1.0 if include_bias else 0.0)
        norm = math.sqrt(float(av @ av) * z_sq)
        if norm < 1e-12:
            raise ZeroGradient(f"sample {rec.sample_id} has a vanishing gradient")
        res.append((av, zv, z_sq, norm))
    (a_a, z_a, zsq_a, n_a), (a_b, z_b, zsq_b, n_b) = res
    z_dot = float(z_a @ z_b) + (1.0 if include_bias else 0.0)
    cos = float(a_a @ a_b) * z_dot / (n_a * n_b)
    return float(np.clip(cos, -1.0, 1.0))
