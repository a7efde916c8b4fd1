"""Message transports behind one contract: in-process channels (default,
one worker per execution unit) and TCP sockets (one worker per process).

Wire format (little-endian), shared by both transports and exercised on
the socket path: frame = magic "QHLO", u32 protocol version = 1, u32
sender rank, u32 step tag, u8 message kind (0 halo plane, 1 reduction
partial, 2 broadcast value, 3 mirror/gather plane), u8 direction, u16
reserved = 0, u64 payload length in bytes, payload of float64 values in
canonical order. Receivers validate the step tag against their own
epoch; a mismatch means the workers desynchronized and is fatal.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass

import numpy as np

from .errors import ProtocolError, TransportError

__all__ = [
    "Message",
    "encode_frame",
    "decode_frame",
    "InprocHub",
    "TcpEndpoint",
    "KIND_HALO",
    "KIND_REDUCE",
    "KIND_BCAST",
    "KIND_PLANE",
    "DIR_LEFT",
    "DIR_RIGHT",
    "DIR_MIRROR",
    "DIR_GATHER",
]

MAGIC = b"QHLO"
VERSION = 1

KIND_HALO = 0
KIND_REDUCE = 1
KIND_BCAST = 2
KIND_PLANE = 3  # mirror exchange and rank-0 gather/scatter
_KINDS = (KIND_HALO, KIND_REDUCE, KIND_BCAST, KIND_PLANE)

DIR_LEFT = 0    # halo payload travels toward lower ranks
DIR_RIGHT = 1   # halo payload travels toward higher ranks
DIR_MIRROR = 0  # kind-3: mirrored-plane exchange
DIR_GATHER = 1  # kind-3: slab plane moving to/from rank 0

_FRAME = struct.Struct("<4sIIIBBHQ")

_POISON = object()


@dataclass
class Message:
    sender: int
    step_tag: int
    kind: int
    direction: int
    payload: np.ndarray  # 1-d float64


def encode_frame(msg: Message) -> bytes:
    payload = np.ascontiguousarray(msg.payload, dtype="<f8")
    header = _FRAME.pack(MAGIC, VERSION, msg.sender, msg.step_tag,
                         msg.kind, msg.direction, 0, payload.nbytes)
    return header + payload.tobytes()


def decode_frame(header: bytes, payload: bytes) -> Message:
    magic, version, sender, tag, kind, direction, reserved, nbytes = _FRAME.unpack(header)
    if magic != MAGIC:
        raise ProtocolError(f"bad frame magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    if reserved != 0:
        raise ProtocolError("reserved frame field is non-zero")
    if kind not in _KINDS:
        raise ProtocolError(f"unknown message kind {kind}")
    if len(payload) != nbytes or nbytes % 8:
        raise ProtocolError("frame payload length mismatch")
    values = np.frombuffer(payload, dtype="<f8").copy()
    return Message(sender=sender, step_tag=tag, kind=kind,
                   direction=direction, payload=values)


def frame_size(header: bytes) -> int:
    return _FRAME.unpack(header)[7]


HEADER_SIZE = _FRAME.size


class _EndpointBase:
    """Shared receive bookkeeping: per-(source, kind) ordered mailboxes."""

    def __init__(self, rank: int, n_workers: int, timeout: float):
        self.rank = rank
        self.n_workers = n_workers
        self.timeout = timeout
        self.sent_counts = {k: 0 for k in _KINDS}
        self._boxes: dict[tuple[int, int], queue.SimpleQueue] = {
            (src, kind): queue.SimpleQueue()
            for src in range(n_workers) for kind in _KINDS
        }

    def _deliver(self, msg_or_poison, src: int, kind: int | None = None):
        if kind is None:
            for k in _KINDS:
                self._boxes[(src, k)].put(msg_or_poison)
        else:
            self._boxes[(src, kind)].put(msg_or_poison)

    def recv(self, src: int, kind: int, expect_tag: int,
             timeout: float | None = None) -> Message:
        """Next message of one kind from one peer; validates the step tag."""
        try:
            item = self._boxes[(src, kind)].get(
                timeout=self.timeout if timeout is None else timeout)
        except queue.Empty:
            raise TransportError(
                f"rank {self.rank}: timed out waiting for kind={kind} from rank {src}"
            ) from None
        if item is _POISON:
            raise TransportError(f"rank {self.rank}: peer {src} failed or disconnected")
        if isinstance(item, BaseException):
            raise TransportError(
                f"rank {self.rank}: peer failure: {item}") from item
        if item.step_tag != expect_tag:
            raise ProtocolError(
                f"rank {self.rank}: tag mismatch from rank {src} "
                f"(got {item.step_tag}, expected {expect_tag})")
        return item


class InprocHub:
    """Mailbox fabric for M workers sharing one process."""

    def __init__(self, n_workers: int, timeout: float = 300.0):
        self.n_workers = n_workers
        self._endpoints = [InprocEndpoint(r, self, timeout) for r in range(n_workers)]
        self._failed = threading.Lock()
        self.first_error: BaseException | None = None

    def endpoint(self, rank: int) -> "InprocEndpoint":
        return self._endpoints[rank]

    def abort(self, exc: BaseException):
        """Wake every blocked worker after a failure anywhere."""
        with self._failed:
            if self.first_error is None:
                self.first_error = exc
        for ep in self._endpoints:
            for src in range(self.n_workers):
                ep._deliver(_POISON, src)


class InprocEndpoint(_EndpointBase):
    def __init__(self, rank: int, hub: InprocHub, timeout: float):
        super().__init__(rank, hub.n_workers, timeout)
        self._hub = hub

    def send(self, dst: int, kind: int, direction: int, tag: int,
             payload: np.ndarray):
        # copy: the sender's buffer mutates as soon as its sweep proceeds
        msg = Message(sender=self.rank, step_tag=tag, kind=kind,
                      direction=direction,
                      payload=np.ascontiguousarray(payload, dtype=np.float64).ravel().copy())
        self.sent_counts[kind] += 1
        self._hub.endpoint(dst)._deliver(msg, self.rank, kind)

    def close(self):
        pass


def _recv_exact(sock: socket.socket, nbytes: int) -> bytes:
    chunks = []
    remaining = nbytes
    while remaining:
        chunk = sock.recv(min(remaining, 1 << 20))
        if not chunk:
            raise ConnectionError("peer closed the connection")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class TcpEndpoint(_EndpointBase):
    """One worker's TCP half: listener plus links to rank 0 and x-neighbors.

    Every pair {i, j} with i < j is dialed by j (workers dial rank 0 and
    their left neighbor, matching the connection topology); the dialer
    announces itself with one empty broadcast-kind frame at tag 0.
    Receiver threads decode frames and dispatch them to the per-(source,
    kind) mailboxes, so a blocking send can never deadlock against a
    peer's send.
    """

    def __init__(self, rank: int, endpoints: list[tuple[str, int]],
                 timeout: float = 60.0):
        super().__init__(rank, len(endpoints), timeout)
        self.endpoints = endpoints
        self._socks: dict[int, socket.socket] = {}
        self._send_locks: dict[int, threading.Lock] = {}
        self._threads: list[threading.Thread] = []
        self._closed = False
        self._connect_all()

    # pair {i, j}, i < j is dialed by j
    def _dial_targets(self) -> set[int]:
        targets = set()
        if self.rank > 0:
            targets.add(0)
            targets.add(self.rank - 1)
        return targets

    def _accept_sources(self) -> set[int]:
        if self.rank == 0:
            return set(range(1, self.n_workers))
        nxt = self.rank + 1
        return {nxt} if nxt < self.n_workers else set()

    def _connect_all(self):
        accept_from = self._accept_sources()
        listener = None
        if accept_from:
            host, port = self.endpoints[self.rank]
            listener = socket.create_server((host, port))
            listener.settimeout(self.timeout)
        try:
            for dst in sorted(self._dial_targets()):
                self._register(dst, self._dial(dst))
            for _ in range(len(accept_from)):
                conn, _addr = listener.accept()
                conn.settimeout(None)
                hello = decode_frame(_recv_exact(conn, HEADER_SIZE), b"")
                if hello.kind != KIND_BCAST or hello.step_tag != 0:
                    raise ProtocolError("expected a rank announcement frame")
                if hello.sender not in accept_from:
                    raise ProtocolError(f"unexpected peer rank {hello.sender}")
                self._register(hello.sender, conn)
        except OSError as exc:
            raise TransportError(f"rank {self.rank}: connection setup failed: {exc}") from exc
        finally:
            if listener is not None:
                listener.close()

    def _dial(self, dst: int) -> socket.socket:
        host, port = self.endpoints[dst]
        deadline = time.monotonic() + self.timeout
        while True:
            try:
                sock = socket.create_connection((host, port), timeout=self.timeout)
                break
            except OSError:
                if time.monotonic() > deadline:
                    raise TransportError(
                        f"rank {self.rank}: cannot reach rank {dst} at {host}:{port}")
                time.sleep(0.05)
        sock.sendall(encode_frame(Message(self.rank, 0, KIND_BCAST, 0,
                                          np.empty(0))))
        return sock

    def _register(self, peer: int, sock: socket.socket):
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._socks[peer] = sock
        self._send_locks[peer] = threading.Lock()
        t = threading.Thread(target=self._receiver, args=(peer, sock), daemon=True)
        t.start()
        self._threads.append(t)

    def _receiver(self, peer: int, sock: socket.socket):
        try:
            while True:
                header = _recv_exact(sock, HEADER_SIZE)
                payload = _recv_exact(sock, frame_size(header))
                msg = decode_frame(header, payload)
                self._deliver(msg, peer, msg.kind)
        except (ConnectionError, OSError, ProtocolError) as exc:
            if not self._closed:
                self._deliver(exc if isinstance(exc, ProtocolError) else _POISON, peer)

    def send(self, dst: int, kind: int, direction: int, tag: int,
             payload: np.ndarray):
        frame = encode_frame(Message(self.rank, tag, kind, direction,
                                     np.asarray(payload, dtype=np.float64).ravel()))
        self.sent_counts[kind] += 1
        try:
            with self._send_locks[dst]:
                self._socks[dst].sendall(frame)
        except OSError as exc:
            raise TransportError(f"rank {self.rank}: send to rank {dst} failed: {exc}") from exc

    def close(self):
        self._closed = True
        for sock in self._socks.values():
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()
