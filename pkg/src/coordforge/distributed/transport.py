"""Master/worker transports: in-process threads or TCP sockets.

A transport gives the master four blocking barriers per run: ``start``
(all workers registered), ``broadcast_state``, ``gather_updates`` and
``gather_slices`` (each worker's current model slice, used for metrics).
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np

from . import wire
from .core import (
    DistributedConfig,
    WorkerState,
    WorkerUpdate,
    make_worker,
    partition_for,
    worker_epoch,
)
from .wire import ProtocolError, TransportError

log = logging.getLogger(__name__)


class Transport:
    def start(self) -> None:
        pass

    def gather_updates(self, epoch: int) -> list[WorkerUpdate]:
        raise NotImplementedError

    def broadcast_state(self, epoch: int, shared, gamma: float) -> None:
        raise NotImplementedError

    def gather_slices(self, epoch: int) -> list[tuple[np.ndarray, np.ndarray]]:
        raise NotImplementedError

    def close(self) -> None:
        pass


class InProcessTransport(Transport):
    """Workers live in this process; each round they run concurrently on a thread pool."""

    def __init__(self, workers: list[WorkerState], seed: int):
        self.workers = workers
        self.seed = seed
        self._pool: Optional[ThreadPoolExecutor] = None

    @classmethod
    def for_problem(cls, p, k: int, config: DistributedConfig, dtype=None):
        partition = partition_for(p, k, config)
        workers = [make_worker(p, partition, w, config.form, config.local_solver,
                               config.n_workers, config.n_lanes, dtype=dtype)
                   for w in range(k)]
        return cls(workers, config.seed)

    def start(self) -> None:
        if len(self.workers) > 1:
            self._pool = ThreadPoolExecutor(max_workers=len(self.workers))

    def gather_updates(self, epoch: int) -> list[WorkerUpdate]:
        if self._pool is None:
            return [worker_epoch(w, self.seed, epoch) for w in self.workers]
        futures = [self._pool.submit(worker_epoch, w, self.seed, epoch) for w in self.workers]
        return [f.result() for f in futures]

    def broadcast_state(self, epoch: int, shared, gamma: float) -> None:
        for w in self.workers:
            w.apply_broadcast(shared, gamma)

    def gather_slices(self, epoch: int):
        return [(w.coords, w.weights.copy()) for w in self.workers]

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ValueError(f"address must look like HOST:PORT, got {text!r}")
    return host, int(port)


class TcpMasterTransport(Transport):
    """Master end of the TCP protocol.

    Binds on construction (so ``port=0`` picks a free port, see ``address``)
    and waits for ``k`` REGISTER frames in :meth:`start`.
    """

    def __init__(self, k: int, host: str = "127.0.0.1", port: int = 0,
                 timeout: Optional[float] = 120.0):
        self.k = k
        self.timeout = timeout
        self._server = socket.create_server((host, port))
        self._server.settimeout(timeout)
        self._peers: dict[int, socket.socket] = {}

    @property
    def address(self) -> tuple[str, int]:
        return self._server.getsockname()[:2]

    def start(self) -> None:
        while len(self._peers) < self.k:
            try:
                conn, addr = self._server.accept()
            except socket.timeout as exc:
                raise TransportError(
                    f"only {len(self._peers)} of {self.k} workers registered") from exc
            conn.settimeout(self.timeout)
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            frame = wire.expect(wire.read_frame(conn), wire.REGISTER, 0)
            worker_id = wire.decode_register(frame.payload)
            if not 0 <= worker_id < self.k or worker_id in self._peers:
                conn.close()
                raise ProtocolError(f"bad or duplicate worker id {worker_id} from {addr}")
            log.debug("worker %d registered from %s", worker_id, addr)
            self._peers[worker_id] = conn

    def _each(self):
        return sorted(self._peers.items())

    def gather_updates(self, epoch: int) -> list[WorkerUpdate]:
        # decode everything before returning so a bad frame never reaches aggregation
        updates = []
        for worker_id, conn in self._each():
            frame = wire.expect(wire.read_frame(conn), wire.UPDATE, epoch)
            sender, delta, cross, sq, label = wire.decode_update(frame.payload)
            if sender != worker_id:
                raise ProtocolError(f"connection of worker {worker_id} sent id {sender}")
            updates.append(WorkerUpdate(epoch, sender, delta, cross, sq, label))
        return updates

    def broadcast_state(self, epoch: int, shared, gamma: float) -> None:
        payload = wire.encode_broadcast(gamma, shared)
        for _, conn in self._each():
            wire.send_frame(conn, wire.BROADCAST, epoch, payload)

    def gather_slices(self, epoch: int):
        slices = []
        for worker_id, conn in self._each():
            frame = wire.expect(wire.read_frame(conn), wire.SLICE, epoch)
            sender, coords, weights = wire.decode_slice(frame.payload)
            if sender != worker_id:
                raise ProtocolError(f"connection of worker {worker_id} sent id {sender}")
            slices.append((coords, weights))
        return slices

    def close(self) -> None:
        for _, conn in self._each():
            try:
                wire.send_frame(conn, wire.SHUTDOWN, 0)
            except TransportError:
                pass
            conn.close()
        self._peers.clear()
        self._server.close()


def run_tcp_worker(state: WorkerState, address: tuple[str, int], seed: int, n_epochs: int,
                   timeout: Optional[float] = 120.0, connect_retries: int = 50) -> WorkerState:
    """Worker end of the TCP protocol: register, then one local epoch per broadcast."""
    sock = _connect(address, timeout, connect_retries)
    try:
        wire.send_frame(sock, wire.REGISTER, 0, wire.encode_register(state.worker_id))
        epoch = 0
        while True:
            frame = wire.read_frame(sock)
            if frame.msg_type == wire.SHUTDOWN:
                return state
            wire.expect(frame, wire.BROADCAST, epoch)
            gamma, shared = wire.decode_broadcast(frame.payload)
            state.apply_broadcast(shared.astype(state.shared.dtype), gamma)
            wire.send_frame(sock, wire.SLICE, epoch,
                            wire.encode_slice(state.worker_id, state.coords, state.weights))
            if epoch < n_epochs:
                epoch += 1
                update = worker_epoch(state, seed, epoch)
                wire.send_frame(sock, wire.UPDATE, epoch, wire.encode_update(
                    state.worker_id, update.delta_shared, update.cross_term,
                    update.delta_sqnorm, update.label_term))
    finally:
        sock.close()


def _connect(address, timeout, retries) -> socket.socket:
    last: Optional[OSError] = None
    for _ in range(max(1, retries)):
        try:
            sock = socket.create_connection(address, timeout=timeout)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return sock
        except OSError as exc:
            last = exc
            time.sleep(0.1)
    raise TransportError(f"could not connect to {address}: {last}")


def spawn_tcp_workers(p, k: int, config: DistributedConfig, address, dtype=None,
                      timeout: Optional[float] = 120.0) -> list[threading.Thread]:
    """Start ``k`` worker threads that talk to the master at ``address`` over TCP.

    Errors raised by a worker are logged; the master sees them as a
    disconnect.
    """
    partition = partition_for(p, k, config)
    threads = []
    for w in range(k):
        state = make_worker(p, partition, w, config.form, config.local_solver,
                            config.n_workers, config.n_lanes, dtype=dtype)

        def target(state=state):
            try:
                run_tcp_worker(state, address, config.seed, config.n_epochs, timeout)
            except TransportError as exc:
                log.warning("worker %d stopped: %s", state.worker_id, exc)

        th = threading.Thread(target=target, name=f"tcp-worker-{w}", daemon=True)
        th.start()
        threads.append(th)
    return threads
