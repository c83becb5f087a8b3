# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: fused per-sample alignment tail and moment updates.

Contracts match fallback.py. The W z projection is delegated to BLAS (via
numpy) exactly like the fallback; the compiled win is fusing residual
construction, norm reductions and the cosine into one pass with no
temporaries. All accumulation is float64 over float32 telemetry.
"""

import numpy as np

cimport cython
from libc.math cimport sqrt, NAN


def batch_raw_moments(double[::1] xs):
    """One-pass Welford/Pebay update over a float64 batch.

    Returns (n, mean, M2, M3, M4) raw sums, mergeable with other shards.
    """
    cdef Py_ssize_t i, n1
    cdef Py_ssize_t count = xs.shape[0]
    cdef double mean = 0.0, m2 = 0.0, m3 = 0.0, m4 = 0.0
    cdef double x, delta, delta_n, delta_n2, term1
    cdef double nn
    for i in range(count):
        x = xs[i]
        n1 = i
        nn = <double> (i + 1)
        delta = x - mean
        delta_n = delta / nn
        delta_n2 = delta_n * delta_n
        term1 = delta * delta_n * n1
        mean += delta_n
        m4 += (term1 * delta_n2 * (nn * nn - 3.0 * nn + 3.0)
               + 6.0 * delta_n2 * m2 - 4.0 * delta_n * m3)
        m3 += term1 * delta_n * (nn - 2.0) - 3.0 * delta_n * m2
        m2 += term1
    return count, mean, m2, m3, m4


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _alignment_tail(
    const float[:, ::1] latents,
    const float[:, ::1] probs,
    const unsigned int[::1] labels,
    const double[:, ::1] proj,
    const float[::1] bias,
    bint include_bias,
    double w_norm,
    double zero_eps,
    double[::1] gamma,
    double[::1] grad_norm,
) nogil:
    cdef Py_ssize_t n = latents.shape[0]
    cdef Py_ssize_t d = latents.shape[1]
    cdef Py_ssize_t c = probs.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double a_k, dot, a_sq, z_sq, wz, gn, g, zv

    for i in range(n):
        dot = 0.0
        a_sq = 0.0
        for k in range(c):
            a_k = -<double> probs[i, k]
            if k == <Py_ssize_t> labels[i]:
                a_k += 1.0
            wz = proj[i, k]
            if include_bias:
                wz += <double> bias[k]
            dot += a_k * wz
            a_sq += a_k * a_k
        z_sq = 0.0
        for j in range(d):
            zv = <double> latents[i, j]
            z_sq += zv * zv
        if include_bias:
            z_sq += 1.0
        gn = sqrt(a_sq * z_sq)
        grad_norm[i] = gn
        if gn < zero_eps:
            gamma[i] = NAN
        else:
            g = dot / (gn * w_norm)
            if g > 1.0:
                g = 1.0
            elif g < -1.0:
                g = -1.0
            gamma[i] = g


def alignment_batch(
    latents,
    probs,
    labels,
    weights,
    bias,
    bint include_bias,
    double w_norm,
    double zero_eps,
):
    """Per-sample gradient/weight cosine and gradient norm for one batch."""
    proj = latents.astype(np.float64, copy=False) @ weights.astype(np.float64).T
    cdef Py_ssize_t n = latents.shape[0]
    gamma_arr = np.empty(n, dtype=np.float64)
    norm_arr = np.empty(n, dtype=np.float64)
    _alignment_tail(
        latents,
        probs,
        labels,
        np.ascontiguousarray(proj),
        bias,
        include_bias,
        w_norm,
        zero_eps,
        gamma_arr,
        norm_arr,
    )
    return gamma_arr, norm_arr
