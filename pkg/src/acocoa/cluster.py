"""K-worker cluster simulation: coordinator-star reduce/broadcast rounds.

Workers own disjoint column blocks and the matching slices of alpha/z/y;
the only globally shared quantity per round is one d-vector each way
(contributions A y^[k] up, w_t down). Two transports: in_process (value
copies, default) and loopback_socket (framed messages over 127.0.0.1 TCP).
Both must produce bit-identical traces for equal seeds.

Socket frame: 8-byte round, 1-byte kind, 4-byte sender, 8-byte element
count (all little-endian unsigned), then the payload as little-endian
64-bit floats.
"""

from __future__ import annotations

import queue
import socket
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .errors import (
    RoundMismatch,
    TransportInitFailure,
    WorkerLost,
    WorkerPanic,
)
from .linalg import ColMatrix
from .local_solver import LocalCols, LocalG, localize_coord_min, pack_local_cols
from .partition import Partition
from .problems import ObjectivePair

KIND_REDUCE = 0
KIND_BROADCAST = 1
KIND_CONTROL = 2

_HEADER = struct.Struct("<QBIQ")  # round, kind, sender, element count


@dataclass
class Message:
    kind: int
    round: int
    sender: int
    payload: np.ndarray


@dataclass
class CommStats:
    reduces: int = 0
    broadcasts: int = 0
    bytes_up: int = 0
    bytes_down: int = 0


@dataclass
class WorkerHandle:
    """One worker's private state; never touches another block."""

    id: int
    block: np.ndarray
    local_cols: LocalCols
    local_g: LocalG
    alpha: np.ndarray  # local slice, length n_k
    z: np.ndarray
    y: np.ndarray
    rng: np.random.Generator
    w_t: Optional[np.ndarray] = None
    rounds_sent: int = 0
    scratch: dict = field(default_factory=dict)


class _InProcessPipe:
    """Value-copy mailboxes standing in for one worker's socket."""

    TIMEOUT = 120.0

    def __init__(self):
        self.up = queue.Queue(maxsize=1)
        self.down = queue.Queue(maxsize=1)

    @staticmethod
    def _copy(msg: Message) -> Message:
        return Message(msg.kind, msg.round, msg.sender,
                       np.array(msg.payload, dtype=np.float64))

    def send_up(self, msg: Message):
        self.up.put(self._copy(msg))

    def recv_up(self) -> Message:
        try:
            return self.up.get(timeout=self.TIMEOUT)
        except queue.Empty:
            raise WorkerLost("no upstream message arrived") from None

    def send_down(self, msg: Message):
        self.down.put(self._copy(msg))

    def recv_down(self) -> Message:
        try:
            return self.down.get(timeout=self.TIMEOUT)
        except queue.Empty:
            raise WorkerLost("no downstream message arrived") from None

    def close(self):
        pass


def _send_frame(sock, msg: Message):
    payload = np.ascontiguousarray(msg.payload, dtype="<f8")
    header = _HEADER.pack(msg.round, msg.kind, msg.sender, payload.size)
    try:
        sock.sendall(header + payload.tobytes())
    except OSError as exc:
        raise WorkerLost(f"send failed: {exc}") from exc


def _recv_exact(sock, nbytes: int) -> bytes:
    chunks = []
    got = 0
    while got < nbytes:
        try:
            chunk = sock.recv(nbytes - got)
        except OSError as exc:
            raise WorkerLost(f"recv failed: {exc}") from exc
        if not chunk:
            raise WorkerLost("peer closed connection mid-frame")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def _recv_frame(sock) -> Message:
    rnd, kind, sender, count = _HEADER.unpack(_recv_exact(sock, _HEADER.size))
    payload = np.frombuffer(_recv_exact(sock, 8 * count), dtype="<f8").astype(
        np.float64
    )
    return Message(kind, rnd, sender, payload)


class _SocketPipe:
    """A loopback TCP connection; coordinator and worker ends."""

    def __init__(self, coord_sock, worker_sock):
        self.coord = coord_sock
        self.worker = worker_sock

    def send_up(self, msg):
        _send_frame(self.worker, msg)

    def recv_up(self):
        return _recv_frame(self.coord)

    def send_down(self, msg):
        _send_frame(self.coord, msg)

    def recv_down(self):
        return _recv_frame(self.worker)

    def close(self):
        for s in (self.coord, self.worker):
            try:
                s.close()
            except OSError:
                pass


def _open_socket_pipes(K: int) -> List[_SocketPipe]:
    try:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind(("127.0.0.1", 0))
        listener.listen(K)
        port = listener.getsockname()[1]
        pipes = []
        for _ in range(K):
            worker_side = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            worker_side.connect(("127.0.0.1", port))
            coord_side, _ = listener.accept()
            coord_side.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            worker_side.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            pipes.append(_SocketPipe(coord_side, worker_side))
        listener.close()
        return pipes
    except OSError as exc:
        raise TransportInitFailure(f"loopback socket setup failed: {exc}") from exc


class Cluster:
    """Coordinator plus K workers; one reduce and one broadcast per round."""

    def __init__(self, workers, pipes, d, transport):
        self.workers: List[WorkerHandle] = workers
        self.pipes = pipes
        self.d = d
        self.transport = transport
        self.stats = CommStats()
        self.round = 0
        self._reduce_done = False
        self._broadcast_done = False
        self._pool = ThreadPoolExecutor(max_workers=len(workers))
        self._closed = False

    @property
    def K(self):
        return len(self.workers)

    def run_round(self, work: Callable[[WorkerHandle], object]) -> list:
        """Run the worker-local phase concurrently; barrier; results by id."""
        futures = [self._pool.submit(work, h) for h in self.workers]
        results = []
        panic = None
        for h, fut in zip(self.workers, futures):
            try:
                results.append(fut.result())
            except Exception as exc:  # noqa: BLE001 - surfaced as WorkerPanic
                results.append(None)
                if panic is None:
                    panic = WorkerPanic(h.id, exc)
        if panic is not None:
            raise panic
        return results

    def all_reduce_sum(self, contributions: List[np.ndarray]) -> np.ndarray:
        """Sum per-worker d-vectors at the coordinator, fixed worker order."""
        if self._reduce_done:
            raise RoundMismatch(f"second reduce in round {self.round}")
        if len(contributions) != self.K:
            raise RoundMismatch(
                f"{len(contributions)} contributions for K={self.K}"
            )

        def send(k):
            h = self.workers[k]
            msg = Message(KIND_REDUCE, self.round, h.id,
                          np.asarray(contributions[k], dtype=np.float64))
            h.rounds_sent += 1
            self.pipes[k].send_up(msg)

        sends = [self._pool.submit(send, k) for k in range(self.K)]
        received = {}
        for k in range(self.K):
            msg = self.pipes[k].recv_up()
            if msg.round != self.round:
                raise RoundMismatch(
                    f"worker {msg.sender} sent round {msg.round}, "
                    f"coordinator at {self.round}"
                )
            if msg.payload.shape != (self.d,):
                raise RoundMismatch(
                    f"payload length {msg.payload.size}, expected d={self.d}"
                )
            received[msg.sender] = msg.payload
        for fut in sends:
            fut.result()
        total = np.zeros(self.d, dtype=np.float64)
        for k in range(self.K):  # fixed order: result is bit-reproducible
            total += received[k]
        self.stats.reduces += 1
        self.stats.bytes_up += self.K * self.d * 8
        self._reduce_done = True
        return total

    def broadcast(self, w: np.ndarray):
        """Deliver a value copy of w to every worker; counted once per round."""
        if self._broadcast_done:
            raise RoundMismatch(f"second broadcast in round {self.round}")
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.d,):
            raise RoundMismatch(f"broadcast length {w.size}, expected {self.d}")

        def recv(k):
            msg = self.pipes[k].recv_down()
            if msg.round != self.round:
                raise RoundMismatch(
                    f"broadcast round {msg.round} at worker {k}, "
                    f"expected {self.round}"
                )
            self.workers[k].w_t = msg.payload
            return True

        recvs = []
        for k in range(self.K):
            self.pipes[k].send_down(Message(KIND_BROADCAST, self.round, -1 & 0xFFFFFFFF, w))
            recvs.append(self._pool.submit(recv, k))
        for fut in recvs:
            fut.result()
        self.stats.broadcasts += 1
        self.stats.bytes_down += self.K * self.d * 8
        self._broadcast_done = True

    def end_round(self):
        """Close the round; requires exactly one reduce and one broadcast."""
        if not (self._reduce_done and self._broadcast_done):
            raise RoundMismatch(
                f"round {self.round} closing with reduce_done="
                f"{self._reduce_done}, broadcast_done={self._broadcast_done}"
            )
        self.round += 1
        self._reduce_done = False
        self._broadcast_done = False

    def gather_alpha(self) -> np.ndarray:
        """Assemble the global iterate for metrics.

        Instrumentation side door: reads worker slices directly and is not
        counted as communication (the algorithm itself never needs it).
        """
        n = sum(len(h.block) for h in self.workers)
        out = np.zeros(n, dtype=np.float64)
        for h in self.workers:
            out[h.block] = h.alpha
        return out

    def gather_z(self) -> np.ndarray:
        n = sum(len(h.block) for h in self.workers)
        out = np.zeros(n, dtype=np.float64)
        for h in self.workers:
            out[h.block] = h.z
        return out

    def close(self):
        if self._closed:
            return
        self._closed = True
        self._pool.shutdown(wait=True)
        for p in self.pipes:
            p.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def spawn_cluster(K: int, part: Partition, m: ColMatrix, pair: ObjectivePair,
                  transport: str = "in_process", seed: int = 0) -> Cluster:
    """Set up K workers over the partition's blocks with private rng streams."""
    if part.K != K:
        raise RoundMismatch(f"partition has {part.K} blocks, asked for {K}")
    if transport == "in_process":
        pipes = [_InProcessPipe() for _ in range(K)]
    elif transport == "loopback_socket":
        pipes = _open_socket_pipes(K)
    else:
        raise TransportInitFailure(f"unknown transport {transport!r}")
    streams = np.random.SeedSequence(seed).spawn(K)
    workers = []
    for k in range(K):
        blk = part.blocks[k]
        workers.append(
            WorkerHandle(
                id=k,
                block=blk,
                local_cols=pack_local_cols(m, blk),
                local_g=localize_coord_min(pair.coord_min, blk),
                alpha=np.zeros(len(blk)),
                z=np.zeros(len(blk)),
                y=np.zeros(len(blk)),
                rng=np.random.default_rng(streams[k]),
            )
        )
    return Cluster(workers, pipes, m.d, transport)
