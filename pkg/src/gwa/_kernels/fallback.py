"""Pure-numpy implementations of the hot kernels.

Same contracts as the compiled module in _core.pyx: float32 inputs,
float64 accumulation, NaN gamma for below-threshold gradients.
"""

from __future__ import annotations

import numpy as np


def batch_raw_moments(xs: np.ndarray) -> tuple[int, float, float, float, float]:
    """Two-pass mean and raw deviation-power sums M2..M4 of a float64 batch."""
    n = int(xs.size)
    if n == 0:
        return 0, 0.0, 0.0, 0.0, 0.0
    mean = float(xs.mean())
    dev = xs - mean
    d2 = dev * dev
    return n, mean, float(d2.sum()), float((d2 * dev).sum()), float((d2 * d2).sum())


def alignment_batch(
    latents: np.ndarray,
    probs: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
    bias: np.ndarray | None,
    include_bias: bool,
    w_norm: float,
    zero_eps: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample gradient/weight cosine and gradient norm for one batch.

    The rank-1 head gradient a z^T is never materialized: the cosine against
    W reduces to a.(Wz) / (|a| |z| |W|_F). With include_bias, z gains a
    constant-1 coordinate and the bias column joins W (w_norm must already
    cover it). Returns float64 (gamma, grad_norm); gamma is NaN where
    grad_norm < zero_eps.
    """
    n = latents.shape[0]
    z = latents.astype(np.float64, copy=False)
    p = probs.astype(np.float64, copy=False)
    w = weights.astype(np.float64, copy=False)

    residual = -p
    residual[np.arange(n), labels] += 1.0

    proj = z @ w.T
    dot = np.einsum("ij,ij->i", residual, proj)
    z_sq = np.einsum("ij,ij->i", z, z)
    a_sq = np.einsum("ij,ij->i", residual, residual)
    if include_bias:
        dot += residual @ bias.astype(np.float64, copy=False)
        z_sq = z_sq + 1.0

    grad_norm = np.sqrt(a_sq * z_sq)
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = dot / (grad_norm * w_norm)
    gamma[grad_norm < zero_eps] = np.nan
    np.clip(gamma, -1.0, 1.0, out=gamma)
    return gamma, grad_norm
