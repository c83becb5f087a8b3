"""Session mechanics, validated with the stdlib only."""

import io
import struct

import pytest

import gwa_emitter
from gwa_emitter import NonMonotonicStep, SessionClosed, ShapeMismatch


def make_session(buf, **kw):
    args = dict(d=3, c=2, dataset_size=4, batch_size=2, steps_per_epoch=2)
    args.update(kw)
    return gwa_emitter.open(buf, **args)


def batch(n=2, d=3, c=2):
    latents = [[float(i * d + j) for j in range(d)] for i in range(n)]
    probs = [[0.25, 0.75] for _ in range(n)]
    labels = [i % c for i in range(n)]
    ids = list(range(n))
    return latents, probs, labels, ids


WEIGHTS = [[0.5, -1.0, 2.0], [1.5, 0.25, -0.125]]


class TestHeader:
    def test_header_written_once_and_parses(self):
        buf = io.BytesIO()
        session = make_session(buf, bias=True, logits=True)
        session.close()
        raw = buf.getvalue()
        assert len(raw) == 32
        magic, version, flags, d, c, n, b, k = struct.unpack("<4sHHIIQII", raw)
        assert magic == b"GWAT"
        assert version == 1
        assert flags == 0b11
        assert (d, c, n, b, k) == (3, 2, 4, 2, 2)

    def test_positive_dims_required(self):
        with pytest.raises(ValueError):
            make_session(io.BytesIO(), d=0)


class TestLifecycle:
    def test_use_after_close_errors(self):
        session = make_session(io.BytesIO())
        session.close()
        latents, probs, labels, ids = batch()
        with pytest.raises(SessionClosed):
            session.emit_step(0, 0, WEIGHTS, None, latents, probs, labels, ids)
        with pytest.raises(SessionClosed):
            session.close()

    def test_context_manager(self):
        buf = io.BytesIO()
        with make_session(buf) as session:
            latents, probs, labels, ids = batch()
            session.emit_step(0, 0, WEIGHTS, None, latents, probs, labels, ids)
        assert len(buf.getvalue()) > 32

    def test_epoch_buffering_flushes_on_boundary(self):
        buf = io.BytesIO()
        session = make_session(buf, steps_per_epoch=1)
        latents, probs, labels, ids = batch()
        session.emit_step(0, 0, WEIGHTS, None, latents, probs, labels, ids)
        size_mid_epoch = len(buf.getvalue())
        assert size_mid_epoch == 32  # epoch 0 still buffered
        session.emit_step(1, 0, WEIGHTS, None, latents, probs, labels, ids)
        assert len(buf.getvalue()) > 32  # epoch 0 flushed at the boundary
        session.close()


class TestValidation:
    def test_monotonic_counters(self):
        session = make_session(io.BytesIO())
        latents, probs, labels, ids = batch()
        session.emit_step(1, 1, WEIGHTS, None, latents, probs, labels, ids)
        for pos in [(1, 1), (1, 0), (0, 5)]:
            with pytest.raises(NonMonotonicStep):
                session.emit_step(*pos, WEIGHTS, None, latents, probs, labels, ids)

    def test_shape_checks(self):
        session = make_session(io.BytesIO())
        latents, probs, labels, ids = batch()
        with pytest.raises(ShapeMismatch):
            session.emit_step(0, 0, [[1.0, 2.0]], None, latents, probs, labels, ids)
        with pytest.raises(ShapeMismatch):
            session.emit_step(0, 0, WEIGHTS, [0.1, 0.2], latents, probs, labels, ids)
        with pytest.raises(ShapeMismatch):
            session.emit_step(0, 0, WEIGHTS, None, latents[:1], probs, labels, ids)
        with pytest.raises(ShapeMismatch):
            session.emit_step(0, 0, WEIGHTS, None, latents, probs, [0, 9], ids)
        big = batch(n=3)
        with pytest.raises(ShapeMismatch):
            session.emit_step(0, 0, WEIGHTS, None, *big)

    def test_bias_session_requires_bias(self):
        session = make_session(io.BytesIO(), bias=True)
        latents, probs, labels, ids = batch()
        with pytest.raises(ShapeMismatch):
            session.emit_step(0, 0, WEIGHTS, None, latents, probs, labels, ids)


class TestDedup:
    def read_records_raw(self, raw):
        """Minimal stdlib parse: returns (wtag, whash) per record."""
        out = []
        off = 32
        while off < len(raw):
            epoch, step, n, wtag, whash = struct.unpack_from("<IIIBQ", raw, off)
            off += 21
            if wtag == 0:
                off += 4 * 2 * 3  # weights
            off += n * (8 + 4 * 3 + 4 * 2 + 4)
            out.append((wtag, whash))
        return out

    def test_identical_weights_emit_reuse_marker(self):
        buf = io.BytesIO()
        session = make_session(buf, steps_per_epoch=3, dataset_size=6)
        latents, probs, labels, ids = batch()
        session.emit_step(0, 0, WEIGHTS, None, latents, probs, labels, ids)
        session.emit_step(0, 1, WEIGHTS, None, latents, probs, labels, ids)
        changed = [[9.0, 0.0, 0.0], [0.0, 9.0, 0.0]]
        session.emit_step(0, 2, changed, None, latents, probs, labels, ids)
        session.close()
        records = self.read_records_raw(buf.getvalue())
        assert [tag for tag, _ in records] == [0, 1, 0]
        assert records[0][1] == records[1][1]
        assert records[2][1] != records[0][1]


class TestSoftmax:
    def test_matches_direct_computation(self):
        import math

        logits = [2.0, -1.0, 0.5]
        probs = gwa_emitter.softmax(logits)
        total = sum(math.exp(x) for x in logits)
        for p, x in zip(probs, logits):
            assert abs(p - math.exp(x) / total) < 1e-12
        assert abs(sum(probs) - 1.0) < 1e-12

    def test_stable_for_large_logits(self):
        probs = gwa_emitter.softmax([1000.0, 999.0])
        assert abs(sum(probs) - 1.0) < 1e-12
        assert probs[0] > probs[1] > 0.0
