"""Conformance against the engine: emitted bytes must parse bit-exactly."""

import io

import numpy as np
import pytest

import gwa_emitter

gwa = pytest.importorskip("gwa", reason="engine package required for round-trip tests")

from gwa import TraceReader, ingest_stream  # noqa: E402
from gwa.trace import TraceWriter, stable_softmax, weight_hash  # noqa: E402


def emit_trace(bias=False, logits=False, lists=False, seed=0):
    """Emit two epochs x two steps of random telemetry; returns (bytes, arrays)."""
    rng = np.random.default_rng(seed)
    d, c, n = 5, 3, 4
    arrays = []
    buf = io.BytesIO()
    session = gwa_emitter.open(
        buf, d=d, c=c, dataset_size=2 * n, batch_size=n, steps_per_epoch=2,
        bias=bias, logits=logits,
    )
    for epoch in range(2):
        for step in range(2):
            weights = rng.standard_normal((c, d)).astype(np.float32)
            bvec = rng.standard_normal(c).astype(np.float32) if bias else None
            latents = rng.standard_normal((n, d)).astype(np.float32)
            if logits:
                payload = rng.standard_normal((n, c)).astype(np.float32)
            else:
                payload = rng.dirichlet(np.ones(c), size=n).astype(np.float32)
            labels = rng.integers(0, c, n).astype(np.uint32)
            ids = np.arange(epoch * n, (epoch + 1) * n, dtype=np.uint64)
            if lists:
                session.emit_step(
                    epoch, step, weights.tolist(),
                    bvec.tolist() if bias else None,
                    latents.tolist(), payload.tolist(), labels.tolist(), ids.tolist(),
                )
            else:
                session.emit_step(epoch, step, weights, bvec, latents, payload, labels, ids)
            arrays.append((epoch, step, weights, bvec, latents, payload, labels, ids))
    session.close()
    return buf.getvalue(), arrays


class TestHeaderRoundTrip:
    def test_header_only_file_accepted(self):
        buf = io.BytesIO()
        session = gwa_emitter.open(buf, d=7, c=4, dataset_size=100, batch_size=10, steps_per_epoch=10)
        session.close()
        result = ingest_stream(io.BytesIO(buf.getvalue()))
        assert len(result.series) == 0
        header = result.header
        assert (header.latent_dim, header.num_classes) == (7, 4)
        assert (header.dataset_size, header.batch_size, header.steps_per_epoch) == (100, 10, 10)

    def test_header_flags_round_trip(self):
        buf = io.BytesIO()
        gwa_emitter.open(
            buf, d=2, c=2, dataset_size=1, batch_size=1, steps_per_epoch=1,
            bias=True, logits=True,
        ).close()
        header = TraceReader(io.BytesIO(buf.getvalue())).header
        assert header.bias_present and header.probs_are_logits


class TestPayloadRoundTrip:
    @pytest.mark.parametrize("lists", [False, True], ids=["buffers", "lists"])
    @pytest.mark.parametrize("bias", [False, True], ids=["nobias", "bias"])
    def test_values_parse_bit_exactly(self, lists, bias):
        raw, arrays = emit_trace(bias=bias, lists=lists)
        records = list(TraceReader(io.BytesIO(raw)))
        assert len(records) == len(arrays)
        for rec, (epoch, step, weights, bvec, latents, payload, labels, ids) in zip(records, arrays):
            assert (rec.epoch, rec.step) == (epoch, step)
            np.testing.assert_array_equal(rec.snapshot.weights, weights)
            if bias:
                np.testing.assert_array_equal(rec.snapshot.bias, bvec)
            np.testing.assert_array_equal(rec.latents, latents)
            np.testing.assert_array_equal(rec.probs, payload)
            np.testing.assert_array_equal(rec.labels, labels)
            np.testing.assert_array_equal(rec.sample_ids, ids)

    def test_three_sample_batch_float32_exact(self):
        # python floats round to float32 on emission and come back exactly
        buf = io.BytesIO()
        session = gwa_emitter.open(buf, d=2, c=2, dataset_size=3, batch_size=3, steps_per_epoch=1)
        latents = [[0.1, 0.2], [1e-8, 3.0], [-7.25, 0.0]]
        probs = [[0.3, 0.7], [0.5, 0.5], [0.9, 0.1]]
        session.emit_step(0, 0, [[1.0, 0.0], [0.0, 1.0]], None, latents, probs, [0, 1, 0], [7, 8, 9])
        session.close()
        rec = next(iter(TraceReader(io.BytesIO(buf.getvalue()))))
        np.testing.assert_array_equal(rec.latents, np.array(latents, dtype=np.float32))
        np.testing.assert_array_equal(rec.probs, np.array(probs, dtype=np.float32))

    def test_matches_engine_native_writer_byte_for_byte(self):
        rng = np.random.default_rng(3)
        d, c, n = 4, 3, 5
        weights = rng.standard_normal((c, d)).astype(np.float32)
        latents = rng.standard_normal((n, d)).astype(np.float32)
        probs = rng.dirichlet(np.ones(c), size=n).astype(np.float32)
        labels = rng.integers(0, c, n).astype(np.uint32)
        ids = np.arange(n, dtype=np.uint64)

        ours = io.BytesIO()
        session = gwa_emitter.open(ours, d=d, c=c, dataset_size=n, batch_size=n, steps_per_epoch=1)
        session.emit_step(0, 0, weights, None, latents, probs, labels, ids)
        session.emit_step(0, 1, weights, None, latents, probs, labels, ids)
        session.close()

        theirs = io.BytesIO()
        from gwa.trace import TraceHeader

        writer = TraceWriter(
            theirs,
            TraceHeader(latent_dim=d, num_classes=c, dataset_size=n, batch_size=n, steps_per_epoch=1),
        )
        writer.write_step(0, 0, weights, None, ids, latents, probs, labels)
        writer.write_step(0, 1, weights, None, ids, latents, probs, labels)
        assert ours.getvalue() == theirs.getvalue()

    def test_weight_hash_matches_engine_definition(self):
        rng = np.random.default_rng(4)
        weights = rng.standard_normal((2, 3)).astype(np.float32)
        raw, _ = emit_trace()
        rec = next(iter(TraceReader(io.BytesIO(raw))))
        assert rec.snapshot.weight_hash == weight_hash(rec.snapshot.weights)
        assert weight_hash(weights) == int.from_bytes(
            __import__("hashlib").sha256(weights.tobytes()).digest()[:8], "little"
        )


class TestDedupAndLogits:
    def test_dedup_marker_round_trips(self):
        rng = np.random.default_rng(5)
        d, c, n = 3, 2, 2
        weights = rng.standard_normal((c, d)).astype(np.float32)
        latents = rng.standard_normal((n, d)).astype(np.float32)
        probs = np.full((n, c), 0.5, np.float32)
        buf = io.BytesIO()
        session = gwa_emitter.open(buf, d=d, c=c, dataset_size=n, batch_size=n, steps_per_epoch=3)
        for step in range(3):
            session.emit_step(0, step, weights, None, latents, probs, [0, 1], [0, 1])
        session.close()
        records = list(TraceReader(io.BytesIO(buf.getvalue())))
        assert [r.weights_reused for r in records] == [False, True, True]
        for r in records:
            np.testing.assert_array_equal(r.snapshot.weights, weights)

    def test_logits_mode_softmax_agreement(self):
        raw, arrays = emit_trace(logits=True)
        result = ingest_stream(io.BytesIO(raw), min_count=1)
        assert result.header.probs_are_logits
        # engine-side softmax of the emitted logits vs client-side reference
        for rec in TraceReader(io.BytesIO(raw)):
            engine = stable_softmax(rec.probs)
            client = np.array([gwa_emitter.softmax(row) for row in rec.probs.tolist()])
            np.testing.assert_allclose(engine, client, atol=1e-6)

    def test_emitted_trace_feeds_full_pipeline(self):
        rng = np.random.default_rng(6)
        d, c, n = 4, 3, 40
        weights = rng.standard_normal((c, d)).astype(np.float32)
        latents = rng.standard_normal((n, d)).astype(np.float32)
        probs = stable_softmax(latents.astype(np.float64) @ weights.astype(np.float64).T).astype(np.float32)
        labels = rng.integers(0, c, n).astype(np.uint32)
        buf = io.BytesIO()
        session = gwa_emitter.open(buf, d=d, c=c, dataset_size=n, batch_size=n, steps_per_epoch=1)
        session.emit_step(0, 0, weights, None, latents, probs, labels, np.arange(n, dtype=np.uint64))
        session.close()
        result = ingest_stream(io.BytesIO(buf.getvalue()))
        dist = result.series.epochs[0]
        assert dist.count + dist.excluded == n
        assert dist.gwa is not None
