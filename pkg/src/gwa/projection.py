"""Random projection of latents (and the head) to a fixed dimension.

A seeded Gaussian matrix R with entries N(0, 1/k) maps latents z -> R z and
head weights W -> W R^T, so the factored alignment formula applies unchanged
in the projected space while inner products are preserved in expectation.
Fixing k across architectures makes alignment magnitudes comparable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .alignment import HeadSnapshot, SampleRecord
from .errors import DimensionMismatch

DEFAULT_TARGET_DIM = 192


@dataclass(frozen=True)
class ProjectionSpec:
    """Deterministic k x D Gaussian projection; the matrix is built lazily.

    An explicit `matrix` overrides the seeded construction (testing hook,
    e.g. identity at k == D).
    """

    source_dim: int
    target_dim: int = DEFAULT_TARGET_DIM
    seed: int = 0
    matrix: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.target_dim > self.source_dim:
            raise DimensionMismatch(
                f"target dim {self.target_dim} exceeds source dim {self.source_dim}"
            )
        if self.matrix is not None:
            m = np.ascontiguousarray(self.matrix, dtype=np.float64)
            if m.shape != (self.target_dim, self.source_dim):
                raise DimensionMismatch(
                    f"override matrix shape {m.shape} != "
                    f"({self.target_dim}, {self.source_dim})"
                )
            object.__setattr__(self, "matrix", m)

    @cached_property
    def rotation(self) -> np.ndarray:
        """The projection matrix R, identical for identical (seed, D, k)."""
        if self.matrix is not None:
            return self.matrix
        rng = np.random.default_rng(self.seed)
        scale = 1.0 / np.sqrt(self.target_dim)
        return rng.standard_normal((self.target_dim, self.source_dim)) * scale


def project_record(spec: ProjectionSpec, record: SampleRecord) -> SampleRecord:
    """Replace the latent with R z; probs and label pass through."""
    if record.latent.shape[0] != spec.source_dim:
        raise DimensionMismatch(
            f"latent length {record.latent.shape[0]} != projection D {spec.source_dim}"
        )
    z = spec.rotation @ record.latent.astype(np.float64)
    return SampleRecord(
        sample_id=record.sample_id,
        latent=z.astype(np.float32),
        probs=record.probs,
        label=record.label,
    )


def project_latents(spec: ProjectionSpec, latents: np.ndarray) -> np.ndarray:
    """Batch form of project_record for (n, D) float arrays."""
    if latents.shape[1] != spec.source_dim:
        raise DimensionMismatch(
            f"latent dim {latents.shape[1]} != projection D {spec.source_dim}"
        )
    return (latents.astype(np.float64) @ spec.rotation.T).astype(np.float32)


def project_head(spec: ProjectionSpec, snapshot: HeadSnapshot) -> HeadSnapshot:
    """Map the head with the same matrix (W -> W R^T); bias is untouched."""
    if snapshot.latent_dim != spec.source_dim:
        raise DimensionMismatch(
            f"head D {snapshot.latent_dim} != projection D {spec.source_dim}"
        )
    w = snapshot.weights.astype(np.float64) @ spec.rotation.T
    return HeadSnapshot(
        weights=w.astype(np.float32),
        bias=snapshot.bias,
        epoch=snapshot.epoch,
        step=snapshot.step,
    )
