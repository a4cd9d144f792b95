"""Cluster wiring: reduce/broadcast contract, framing, accounting."""

import socket
import struct

import numpy as np
import pytest

from acocoa.cluster import (
    _HEADER,
    _recv_frame,
    _send_frame,
    KIND_REDUCE,
    Message,
    spawn_cluster,
)
from acocoa.errors import (
    RoundMismatch,
    TransportInitFailure,
    WorkerLost,
    WorkerPanic,
)
from acocoa.partition import partition_balanced
from acocoa.problems import LassoInstance

from conftest import random_colmatrix


def make_cluster(K, n=8, d=4, transport="in_process", seed=0):
    rng = np.random.default_rng(99)
    m = random_colmatrix(rng, d, n)
    part = partition_balanced(n, K, seed=1)
    pair = LassoInstance(b=np.zeros(d), lambda1=0.1, n=n).pair()
    return spawn_cluster(K, part, m, pair, transport=transport, seed=seed)


class TestSpawn:
    def test_single_worker(self):
        with make_cluster(1) as c:
            assert c.K == 1
            assert len(c.workers[0].block) == 8
            assert c.workers[0].id == 0

    def test_four_workers_cover_indices(self):
        with make_cluster(4) as c:
            assert c.K == 4
            seen = np.concatenate([h.block for h in c.workers])
            assert sorted(seen.tolist()) == list(range(8))
            assert [h.id for h in c.workers] == [0, 1, 2, 3]

    def test_block_count_mismatch(self):
        rng = np.random.default_rng(0)
        m = random_colmatrix(rng, 4, 8)
        part = partition_balanced(8, 2, seed=1)
        pair = LassoInstance(b=np.zeros(4), lambda1=0.1, n=8).pair()
        with pytest.raises(RoundMismatch):
            spawn_cluster(3, part, m, pair)

    def test_unknown_transport(self):
        rng = np.random.default_rng(0)
        m = random_colmatrix(rng, 4, 8)
        part = partition_balanced(8, 2, seed=1)
        pair = LassoInstance(b=np.zeros(4), lambda1=0.1, n=8).pair()
        with pytest.raises(TransportInitFailure):
            spawn_cluster(2, part, m, pair, transport="carrier_pigeon")

    def test_worker_rng_streams_differ(self):
        with make_cluster(2) as c:
            a = c.workers[0].rng.random(4)
            b = c.workers[1].rng.random(4)
            assert not np.allclose(a, b)

    def test_same_seed_same_streams(self):
        with make_cluster(2, seed=3) as c1, make_cluster(2, seed=3) as c2:
            assert np.array_equal(c1.workers[1].rng.random(4),
                                  c2.workers[1].rng.random(4))


class TestAllReduce:
    def test_basis_vectors(self):
        with make_cluster(2) as c:
            out = c.all_reduce_sum([np.array([1.0, 0.0, 0.0, 0.0]),
                                    np.array([0.0, 1.0, 0.0, 0.0])])
            assert np.array_equal(out, np.array([1.0, 1.0, 0.0, 0.0]))

    def test_zeros(self):
        with make_cluster(3) as c:
            out = c.all_reduce_sum([np.zeros(4)] * 3)
            assert np.array_equal(out, np.zeros(4))

    def test_fixed_order_sum_bit_exact(self):
        rng = np.random.default_rng(11)
        parts = [rng.standard_normal(4) * 10.0 ** rng.integers(-6, 6)
                 for _ in range(4)]
        expected = np.zeros(4)
        for p in parts:  # same order the coordinator uses
            expected = expected + p
        with make_cluster(4) as c:
            out = c.all_reduce_sum(parts)
            assert np.array_equal(out, expected)

    def test_second_reduce_same_round(self):
        with make_cluster(2) as c:
            c.all_reduce_sum([np.zeros(4), np.zeros(4)])
            with pytest.raises(RoundMismatch):
                c.all_reduce_sum([np.zeros(4), np.zeros(4)])

    def test_wrong_contribution_count(self):
        with make_cluster(2) as c:
            with pytest.raises(RoundMismatch):
                c.all_reduce_sum([np.zeros(4)])

    def test_wrong_length_payload(self):
        with make_cluster(2) as c:
            with pytest.raises(RoundMismatch):
                c.all_reduce_sum([np.zeros(5), np.zeros(5)])


class TestBroadcast:
    def test_value_copies_delivered(self):
        with make_cluster(3) as c:
            w = np.array([1.0, 2.0, 3.0, 4.0])
            c.broadcast(w)
            for h in c.workers:
                assert np.array_equal(h.w_t, w)
            w[0] = -100.0  # coordinator-side mutation must not leak
            assert c.workers[0].w_t[0] == 1.0
            c.workers[1].w_t[1] = 7.0  # nor worker-to-worker
            assert c.workers[2].w_t[1] == 2.0

    def test_second_broadcast_same_round(self):
        with make_cluster(2) as c:
            c.broadcast(np.zeros(4))
            with pytest.raises(RoundMismatch):
                c.broadcast(np.ones(4))

    def test_wrong_length(self):
        with make_cluster(2) as c:
            with pytest.raises(RoundMismatch):
                c.broadcast(np.zeros(3))


class TestRoundLifecycle:
    def test_full_round_advances(self):
        with make_cluster(2) as c:
            assert c.round == 0
            c.all_reduce_sum([np.zeros(4), np.zeros(4)])
            c.broadcast(np.zeros(4))
            c.end_round()
            assert c.round == 1
            # flags reset: a fresh reduce is legal again
            c.all_reduce_sum([np.zeros(4), np.zeros(4)])

    def test_end_without_reduce(self):
        with make_cluster(2) as c:
            with pytest.raises(RoundMismatch):
                c.end_round()

    def test_end_without_broadcast(self):
        with make_cluster(2) as c:
            c.all_reduce_sum([np.zeros(4), np.zeros(4)])
            with pytest.raises(RoundMismatch):
                c.end_round()

    def test_byte_accounting(self):
        T, K, d = 5, 4, 4
        with make_cluster(K, d=d) as c:
            for _ in range(T):
                c.all_reduce_sum([np.zeros(d)] * K)
                c.broadcast(np.zeros(d))
                c.end_round()
            assert c.stats.reduces == T
            assert c.stats.broadcasts == T
            assert c.stats.bytes_up == T * K * d * 8
            assert c.stats.bytes_down == T * K * d * 8


class TestRunRound:
    def test_results_in_worker_order(self):
        with make_cluster(4) as c:
            out = c.run_round(lambda h: h.id * 10)
            assert out == [0, 10, 20, 30]

    def test_worker_exception_becomes_panic(self):
        def work(h):
            if h.id == 2:
                raise ValueError("boom")
            return h.id

        with make_cluster(4) as c:
            with pytest.raises(WorkerPanic) as exc_info:
                c.run_round(work)
            assert exc_info.value.worker_id == 2
            assert isinstance(exc_info.value.cause, ValueError)

    def test_workers_mutate_private_state(self):
        with make_cluster(2) as c:
            c.run_round(lambda h: h.alpha.fill(float(h.id + 1)))
            assert np.all(c.workers[0].alpha == 1.0)
            assert np.all(c.workers[1].alpha == 2.0)


class TestGather:
    def test_gather_assembles_slices(self):
        with make_cluster(3) as c:
            c.run_round(lambda h: h.alpha.__setitem__(slice(None),
                                                      h.block.astype(float)))
            alpha = c.gather_alpha()
            assert np.array_equal(alpha, np.arange(8, dtype=float))

    def test_gather_not_counted_as_communication(self):
        with make_cluster(3) as c:
            c.gather_alpha()
            c.gather_z()
            assert c.stats.reduces == 0
            assert c.stats.broadcasts == 0
            assert c.stats.bytes_up == 0
            assert c.stats.bytes_down == 0


class TestSocketTransport:
    def test_reduce_matches_in_process(self):
        rng = np.random.default_rng(5)
        parts = [rng.standard_normal(4) for _ in range(3)]
        with make_cluster(3) as c1:
            ref = c1.all_reduce_sum([p.copy() for p in parts])
        with make_cluster(3, transport="loopback_socket") as c2:
            out = c2.all_reduce_sum([p.copy() for p in parts])
        assert np.array_equal(ref, out)

    def test_broadcast_over_sockets(self):
        with make_cluster(2, transport="loopback_socket") as c:
            w = np.array([0.5, -1.5, 2.5, -3.5])
            c.broadcast(w)
            for h in c.workers:
                assert np.array_equal(h.w_t, w)

    def test_frame_wire_layout(self):
        a, b = socket.socketpair()
        try:
            payload = np.array([1.0, -2.0, 0.25])
            _send_frame(a, Message(KIND_REDUCE, 7, 3, payload))
            raw = b.recv(4096)
        finally:
            a.close()
            b.close()
        assert len(raw) == _HEADER.size + 3 * 8
        rnd, kind, sender, count = struct.unpack("<QBIQ", raw[:_HEADER.size])
        assert (rnd, kind, sender, count) == (7, KIND_REDUCE, 3, 3)
        decoded = np.frombuffer(raw[_HEADER.size:], dtype="<f8")
        assert np.array_equal(decoded, payload)

    def test_frame_roundtrip(self):
        a, b = socket.socketpair()
        try:
            payload = np.array([np.pi, -np.e, 1e-300, 1e300])
            _send_frame(a, Message(KIND_REDUCE, 12, 1, payload))
            msg = _recv_frame(b)
        finally:
            a.close()
            b.close()
        assert msg.round == 12
        assert msg.sender == 1
        assert np.array_equal(msg.payload, payload)

    def test_closed_peer_raises_worker_lost(self):
        a, b = socket.socketpair()
        a.close()
        try:
            with pytest.raises(WorkerLost):
                _recv_frame(b)
        finally:
            b.close()
