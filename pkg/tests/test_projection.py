"""Seeded Gaussian projection: determinism, linearity, JL guarantees."""

import numpy as np
import pytest

from gwa import HeadSnapshot, ProjectionSpec, SampleRecord, project_head, project_record
from gwa.errors import DimensionMismatch
from gwa.projection import project_latents


def make_record(z, c=3):
    probs = np.full(c, 1.0 / c, np.float32)
    return SampleRecord(sample_id=0, latent=z.astype(np.float32), probs=probs, label=0)


class TestSpec:
    def test_identical_spec_gives_identical_matrix(self):
        a = ProjectionSpec(source_dim=64, target_dim=16, seed=5)
        b = ProjectionSpec(source_dim=64, target_dim=16, seed=5)
        np.testing.assert_array_equal(a.rotation, b.rotation)

    def test_different_seed_differs(self):
        a = ProjectionSpec(source_dim=64, target_dim=16, seed=5)
        b = ProjectionSpec(source_dim=64, target_dim=16, seed=6)
        assert not np.array_equal(a.rotation, b.rotation)

    def test_target_cannot_exceed_source(self):
        with pytest.raises(DimensionMismatch):
            ProjectionSpec(source_dim=8, target_dim=9)

    def test_entry_variance_is_one_over_k(self):
        spec = ProjectionSpec(source_dim=2048, target_dim=256, seed=0)
        assert spec.rotation.var() == pytest.approx(1.0 / 256, rel=0.02)


class TestProjectRecord:
    def test_identity_override_is_noop(self):
        spec = ProjectionSpec(source_dim=4, target_dim=4, matrix=np.eye(4))
        rec = make_record(np.array([1.0, -2.0, 3.0, 0.5]))
        out = project_record(spec, rec)
        np.testing.assert_array_equal(out.latent, rec.latent)
        np.testing.assert_array_equal(out.probs, rec.probs)
        assert out.label == rec.label

    def test_dimension_mismatch(self):
        spec = ProjectionSpec(source_dim=8, target_dim=4)
        with pytest.raises(DimensionMismatch):
            project_record(spec, make_record(np.ones(5)))

    def test_linearity(self):
        spec = ProjectionSpec(source_dim=32, target_dim=8, seed=1)
        rng = np.random.default_rng(2)
        z1, z2 = rng.standard_normal((2, 32))
        alpha = 2.5
        left = spec.rotation @ (alpha * z1 + z2)
        right = alpha * (spec.rotation @ z1) + spec.rotation @ z2
        np.testing.assert_allclose(left, right, atol=1e-6)

    def test_norm_preservation_monte_carlo(self):
        # JL guarantee: |Rz| within (1 +- eps)|z| for >= 95% of vectors
        spec = ProjectionSpec(source_dim=1024, target_dim=192, seed=3)
        rng = np.random.default_rng(4)
        eps = 0.3
        hits = 0
        trials = 400
        for _ in range(trials):
            z = rng.standard_normal(1024)
            ratio = np.linalg.norm(spec.rotation @ z) / np.linalg.norm(z)
            hits += (1 - eps) <= ratio <= (1 + eps)
        assert hits / trials >= 0.95

    def test_inner_product_preservation_across_seeds(self):
        rng = np.random.default_rng(5)
        u = rng.standard_normal(1024)
        v = rng.standard_normal(1024)
        eps = 0.3
        bound = eps * np.linalg.norm(u) * np.linalg.norm(v)
        hits = 0
        seeds = range(200)
        for seed in seeds:
            spec = ProjectionSpec(source_dim=1024, target_dim=192, seed=seed)
            pu, pv = spec.rotation @ u, spec.rotation @ v
            hits += abs(pu @ pv - u @ v) <= bound
        assert hits / len(seeds) >= 0.95


class TestProjectHead:
    def test_identity_override_is_noop(self):
        spec = ProjectionSpec(source_dim=3, target_dim=3, matrix=np.eye(3))
        snap = HeadSnapshot(weights=np.arange(6, dtype=np.float32).reshape(2, 3))
        out = project_head(spec, snap)
        np.testing.assert_array_equal(out.weights, snap.weights)

    def test_bias_untouched(self):
        spec = ProjectionSpec(source_dim=6, target_dim=2, seed=0)
        snap = HeadSnapshot(
            weights=np.ones((2, 6), np.float32), bias=np.array([1.0, -1.0], np.float32)
        )
        out = project_head(spec, snap)
        np.testing.assert_array_equal(out.bias, snap.bias)
        assert out.weights.shape == (2, 2)

    def test_projected_product_concentrates(self):
        # (W R^T)(R z) stays near W z for >= 90% of random instances.
        # Deviation is measured on the JL scale |W|_F |z|: for incoherent
        # random W, z the target W z itself is O(|W||z|/sqrt(D)) and no
        # projection could track it in a ratio sense.
        rng = np.random.default_rng(6)
        ok = 0
        trials = 200
        for trial in range(trials):
            spec = ProjectionSpec(source_dim=1024, target_dim=192, seed=1000 + trial)
            w = rng.standard_normal((5, 1024))
            z = rng.standard_normal(1024)
            want = w @ z
            got = (w @ spec.rotation.T) @ (spec.rotation @ z)
            scale = np.linalg.norm(w) * np.linalg.norm(z)
            ok += np.linalg.norm(got - want) / scale < 0.35
        assert ok / trials >= 0.90

    def test_batch_projection_matches_single(self):
        spec = ProjectionSpec(source_dim=16, target_dim=4, seed=9)
        rng = np.random.default_rng(10)
        latents = rng.standard_normal((8, 16)).astype(np.float32)
        batch = project_latents(spec, latents)
        for i in range(8):
            single = project_record(spec, make_record(latents[i]))
            np.testing.assert_array_equal(batch[i], single.latent)
