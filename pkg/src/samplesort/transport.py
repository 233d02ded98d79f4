"""Message passing between sort workers.

Two backends share one interface: an in-process fabric that routes frames
through bounded per-(source, dest) channels, and a TCP backend that speaks a
little-endian framed protocol over a full mesh of sockets. Collectives are
gather-to-master, broadcast-from-master, and the offset-addressed bulk
exchange in which every worker sends and receives concurrently.

Wire format (TCP): 4-byte magic, 4-byte source, 4-byte dest, 8-byte
dest_offset, 8-byte count, then count * element_size payload bytes. The low
16 bits of the magic carry the element size so a frame is self-describing;
control frames use element size 1.
"""

from __future__ import annotations

import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ParameterError, ProtocolError, TransportError

FRAME_HEADER = struct.Struct("<IIIQQ")
MAGIC_DATA = 0x53440000  # "SD" << 16, low bits hold the element size
MAGIC_CTRL = 0x53430000  # "SC" << 16
_MAGIC_MASK = 0xFFFF0000
_HELLO = struct.Struct("<II")
_HELLO_MAGIC = 0x53480001

MASTER = 0
DEFAULT_CHUNK_BYTES = 256 * 1024
DEFAULT_TIMEOUT = 60.0
DEFAULT_CHANNEL_DEPTH = 8


@dataclass(frozen=True)
class Endpoint:
    """A worker's identity plus the addresses of every cluster member."""

    worker_id: int
    peers: tuple[str, ...]  # "host:port" strings indexed by worker id

    def __post_init__(self) -> None:
        if not 0 <= self.worker_id < len(self.peers):
            raise ParameterError(
                f"worker_id {self.worker_id} outside 0..{len(self.peers) - 1}"
            )

    def address(self, worker: int) -> tuple[str, int]:
        host, _, port = self.peers[worker].rpartition(":")
        return host, int(port)


@dataclass
class Frame:
    magic: int
    source: int
    dest: int
    dest_offset: int
    count: int
    payload: object  # ndarray view (in-process data) or bytes

    @property
    def kind(self) -> int:
        return self.magic & _MAGIC_MASK

    @property
    def element_size(self) -> int:
        return self.magic & 0xFFFF


class BoundedChannel:
    """A FIFO with blocking put/get, a capacity bound, and abort support."""

    def __init__(self, capacity: int) -> None:
        self._items: deque = deque()
        self._capacity = capacity
        self._cond = threading.Condition()
        self._abort_reason: str | None = None

    def put(self, item, timeout: float) -> None:
        deadline = time.monotonic() + timeout
        with self._cond:
            while len(self._items) >= self._capacity:
                if self._abort_reason is not None:
                    raise TransportError(self._abort_reason)
                remaining = deadline - time.monotonic()
                if remaining <= 0 or not self._cond.wait(remaining):
                    raise TransportError("send stalled: receiver not draining")
            if self._abort_reason is not None:
                raise TransportError(self._abort_reason)
            self._items.append(item)
            self._cond.notify_all()

    def get(self, timeout: float, waiting_for: str):
        deadline = time.monotonic() + timeout
        with self._cond:
            while not self._items:
                if self._abort_reason is not None:
                    raise TransportError(self._abort_reason)
                remaining = deadline - time.monotonic()
                if remaining <= 0 or not self._cond.wait(remaining):
                    raise TransportError(f"timed out waiting for {waiting_for}")
            item = self._items.popleft()
            self._cond.notify_all()
            return item

    def abort(self, reason: str) -> None:
        with self._cond:
            self._abort_reason = reason
            self._cond.notify_all()


class Transport:
    """Per-worker endpoint implementing the collectives over raw frame I/O."""

    def __init__(self, worker_id: int, size: int, recv_timeout: float = DEFAULT_TIMEOUT,
                 channel_depth: int = DEFAULT_CHANNEL_DEPTH) -> None:
        if size < 1:
            raise ParameterError(f"cluster size must be >= 1, got {size}")
        if not 0 <= worker_id < size:
            raise ParameterError(f"worker_id {worker_id} outside 0..{size - 1}")
        self.worker_id = worker_id
        self.size = size
        self.recv_timeout = recv_timeout
        others = [w for w in range(size) if w != worker_id]
        self._ctrl = {src: BoundedChannel(channel_depth) for src in others}
        self._data = {src: BoundedChannel(channel_depth) for src in others}

    # -- backend interface -------------------------------------------------

    def _send(self, frame: Frame) -> None:
        raise NotImplementedError

    def _sends_done(self) -> None:
        """Hook invoked after a worker has issued all sends of one exchange."""

    def close(self) -> None:
        pass

    def abort(self, reason: str) -> None:
        for chan in self._ctrl.values():
            chan.abort(reason)
        for chan in self._data.values():
            chan.abort(reason)

    def _dispatch(self, frame: Frame) -> None:
        """Deliver an incoming frame into the matching local channel."""
        channels = self._data if frame.kind == MAGIC_DATA else self._ctrl
        chan = channels.get(frame.source)
        if chan is None:
            raise ProtocolError(f"frame from unknown worker {frame.source}")
        chan.put(frame, self.recv_timeout)

    # -- collectives --------------------------------------------------------

    def _recv_ctrl(self, src: int) -> Frame:
        frame = self._ctrl[src].get(self.recv_timeout, waiting_for=f"worker {src}")
        if frame.source != src or frame.dest != self.worker_id:
            raise ProtocolError(
                f"misrouted frame: {frame.source}->{frame.dest} on channel {src}"
            )
        return frame

    def gather_to_master(self, payload: bytes) -> list[bytes] | None:
        """Send ``payload`` to the master; the master returns all p payloads.

        Master-side storage is a single contiguous region, sliced per source.
        Non-masters return None once their payload is handed to the backend.
        """
        payload = bytes(payload)
        if self.worker_id != MASTER:
            self._send(Frame(MAGIC_CTRL | 1, self.worker_id, MASTER, 0, len(payload), payload))
            return None
        parts: list[bytes] = [b""] * self.size
        parts[MASTER] = payload
        for src in range(self.size):
            if src == MASTER:
                continue
            frame = self._recv_ctrl(src)
            parts[src] = bytes(frame.payload)
        region = b"".join(parts)
        out, start = [], 0
        for part in parts:
            out.append(region[start:start + len(part)])
            start += len(part)
        return out

    def broadcast_from_master(self, payload: bytes | None) -> bytes:
        """Master sends ``payload`` to everyone; all workers return it."""
        if self.worker_id == MASTER:
            if payload is None:
                raise ParameterError("master must supply the broadcast payload")
            data = bytes(payload)
            for dst in range(self.size):
                if dst != MASTER:
                    self._send(Frame(MAGIC_CTRL | 1, MASTER, dst, 0, len(data), data))
            return data
        frame = self._recv_ctrl(MASTER)
        return bytes(frame.payload)

    def exchange(
        self,
        counts: np.ndarray,
        outgoing: Sequence[np.ndarray],
        chunk_bytes: int = DEFAULT_CHUNK_BYTES,
    ) -> np.ndarray:
        """All-to-all element exchange against a globally known size matrix.

        ``counts[s, d]`` is how many elements worker s sends to worker d; row
        ``worker_id`` must match the outgoing array lengths. Each sender
        writes at the prefix-sum offset of its row within the receiver's
        landing region, so concurrent incoming writes never overlap. Sending
        and receiving proceed concurrently; finishing the send loop is never
        a precondition for accepting data, and vice versa.
        """
        me, p = self.worker_id, self.size
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (p, p):
            raise ProtocolError(f"counts matrix must be {p}x{p}, got {counts.shape}")
        if len(outgoing) != p:
            raise ProtocolError(f"need {p} outgoing ranges, got {len(outgoing)}")
        dtype = outgoing[0].dtype
        for dst, arr in enumerate(outgoing):
            if arr.dtype != dtype:
                raise ProtocolError("outgoing ranges must share one dtype")
            if arr.size != counts[me, dst]:
                raise ProtocolError(
                    f"outgoing[{dst}] holds {arr.size} elements, plan says {counts[me, dst]}"
                )
        col = counts[:, me]
        offsets = np.zeros(p + 1, dtype=np.int64)
        np.cumsum(col, out=offsets[1:])
        region = np.empty(int(offsets[p]), dtype=dtype)

        failures: list[BaseException] = []

        def _reader(src: int) -> None:
            try:
                self._read_from(src, region, int(offsets[src]), int(col[src]))
            except BaseException as exc:  # propagate to the caller thread
                failures.append(exc)
                self.abort(f"exchange failed: {exc}")  # unblock sibling readers

        readers = [
            threading.Thread(target=_reader, args=(src,), daemon=True)
            for src in range(p)
            if src != me and col[src] > 0
        ]
        for t in readers:
            t.start()

        region[offsets[me]:offsets[me] + int(col[me])] = outgoing[me]
        chunk_elems = max(1, chunk_bytes // max(1, dtype.itemsize))
        magic = MAGIC_DATA | dtype.itemsize
        try:
            for step in range(1, p):
                dst = (me + step) % p
                arr = outgoing[dst]
                if arr.size == 0:
                    continue
                base = int(counts[:me, dst].sum())
                sent = 0
                while sent < arr.size:
                    n = int(min(chunk_elems, arr.size - sent))
                    self._send(Frame(magic, me, dst, base + sent, n, arr[sent:sent + n]))
                    sent += n
        finally:
            self._sends_done()
        for t in readers:
            t.join()
        if failures:
            raise failures[0]
        return region

    def _read_from(self, src: int, region: np.ndarray, base: int, expected: int) -> None:
        """Drain one sender's exchange frames into the landing region."""
        chan = self._data[src]
        got = 0
        intervals: list[tuple[int, int]] = []
        while got < expected:
            frame = chan.get(self.recv_timeout, waiting_for=f"exchange data from worker {src}")
            if frame.kind != MAGIC_DATA or frame.source != src or frame.dest != self.worker_id:
                raise ProtocolError(f"unexpected frame from worker {src}")
            if frame.element_size != region.dtype.itemsize:
                raise ProtocolError(
                    f"element size {frame.element_size} != region itemsize {region.dtype.itemsize}"
                )
            off, cnt = frame.dest_offset, frame.count
            if cnt <= 0 or off < base or off + cnt > base + expected:
                raise ProtocolError(
                    f"frame from worker {src} covers [{off}, {off + cnt}) outside "
                    f"its window [{base}, {base + expected})"
                )
            payload = frame.payload
            if isinstance(payload, (bytes, bytearray, memoryview)):
                payload = np.frombuffer(payload, dtype=region.dtype)
            elif payload.dtype != region.dtype:
                raise ProtocolError(
                    f"frame dtype {payload.dtype} != region dtype {region.dtype}"
                )
            if payload.size != cnt:
                raise ProtocolError(
                    f"frame count {cnt} disagrees with payload size {payload.size}"
                )
            region[off:off + cnt] = payload
            intervals.append((off, cnt))
            got += cnt
        intervals.sort()
        cursor = base
        for off, cnt in intervals:
            if off != cursor:
                raise ProtocolError(
                    f"frames from worker {src} do not tile their window exactly"
                )
            cursor += cnt
        if cursor != base + expected:
            raise ProtocolError(f"frames from worker {src} do not cover their window")


# -- in-process backend ------------------------------------------------------


class InprocTransport(Transport):
    def __init__(self, worker_id: int, cluster: "InprocCluster") -> None:
        super().__init__(worker_id, cluster.size, cluster.recv_timeout, cluster.channel_depth)
        self._cluster = cluster

    def _send(self, frame: Frame) -> None:
        self._cluster.deliver(frame)

    def _sends_done(self) -> None:
        self._cluster.sends_done(self.worker_id)


class InprocCluster:
    """Hub owning one in-process transport per worker; direct queue delivery."""

    def __init__(self, size: int, recv_timeout: float = DEFAULT_TIMEOUT,
                 channel_depth: int = DEFAULT_CHANNEL_DEPTH) -> None:
        self.size = size
        self.recv_timeout = recv_timeout
        self.channel_depth = channel_depth
        self.transports = [InprocTransport(w, self) for w in range(size)]

    def deliver(self, frame: Frame) -> None:
        self.transports[frame.dest]._dispatch(frame)

    def sends_done(self, worker: int) -> None:
        pass

    def abort(self, reason: str) -> None:
        for t in self.transports:
            t.abort(reason)

    def close(self) -> None:
        pass


class DelayedInprocCluster(InprocCluster):
    """In-process fabric that withholds exchange data until all sends are in.

    Used to prove the overlap contract: workers must complete even when no
    data arrives before every worker has issued all of its sends. Buffered
    frames are released in a seeded random order, so repeated trials explore
    different interleavings while control traffic flows undelayed.
    """

    def __init__(self, size: int, delivery_seed: int = 0, **kwargs) -> None:
        super().__init__(size, **kwargs)
        self._lock = threading.Lock()
        self._seed = delivery_seed
        self._send_gen = [0] * size
        self._pending: dict[int, list[Frame]] = {}
        self._done: dict[int, int] = {}

    def deliver(self, frame: Frame) -> None:
        if frame.kind != MAGIC_DATA:
            super().deliver(frame)
            return
        with self._lock:
            gen = self._send_gen[frame.source]
            self._pending.setdefault(gen, []).append(frame)

    def sends_done(self, worker: int) -> None:
        with self._lock:
            gen = self._send_gen[worker]
            self._send_gen[worker] += 1
            self._done[gen] = self._done.get(gen, 0) + 1
            if self._done[gen] < self.size:
                return
            frames = self._pending.pop(gen, [])
        rng = np.random.default_rng(self._seed * 1_000_003 + gen)
        rng.shuffle(frames)
        for frame in frames:
            super().deliver(frame)


# -- TCP backend --------------------------------------------------------------


def _recvall(sock: socket.socket, length: int) -> bytes:
    chunks = []
    remaining = length
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise TransportError("peer closed connection mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class TcpTransport(Transport):
    """Socket-backed worker endpoint: a directed TCP stream per peer pair.

    Every worker dials every peer (that socket carries its outgoing frames)
    and accepts one connection from every peer (a reader thread per accepted
    socket parses frames into the local channels).
    """

    def __init__(self, endpoint: Endpoint, recv_timeout: float = DEFAULT_TIMEOUT,
                 channel_depth: int = DEFAULT_CHANNEL_DEPTH,
                 listener: socket.socket | None = None) -> None:
        super().__init__(endpoint.worker_id, len(endpoint.peers), recv_timeout, channel_depth)
        self.endpoint = endpoint
        self._out: dict[int, socket.socket] = {}
        self._readers: list[threading.Thread] = []
        self._in_socks: list[socket.socket] = []
        self._closing = False

        if self.size == 1:
            self._listener = None
            if listener is not None:
                listener.close()
            return
        if listener is None:
            host, port = endpoint.address(endpoint.worker_id)
            listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            listener.bind((host, port))
            listener.listen(self.size)
        self._listener = listener
        self._listener.settimeout(recv_timeout)
        try:
            self._connect_mesh()
        except BaseException:
            self.close()
            raise

    def _connect_mesh(self) -> None:
        deadline = time.monotonic() + self.recv_timeout
        for dst in range(self.size):
            if dst == self.worker_id:
                continue
            sock = self._dial(self.endpoint.address(dst), deadline)
            sock.sendall(_HELLO.pack(_HELLO_MAGIC, self.worker_id))
            self._out[dst] = sock
        pending = {w for w in range(self.size) if w != self.worker_id}
        while pending:
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                raise TransportError(
                    f"workers {sorted(pending)} never connected to worker {self.worker_id}"
                ) from None
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            magic, src = _HELLO.unpack(_recvall(conn, _HELLO.size))
            if magic != _HELLO_MAGIC or src not in pending:
                conn.close()
                raise ProtocolError(f"bad hello from peer (claimed worker {src})")
            pending.discard(src)
            self._in_socks.append(conn)
            reader = threading.Thread(target=self._reader_loop, args=(conn,), daemon=True)
            reader.start()
            self._readers.append(reader)

    @staticmethod
    def _dial(address: tuple[str, int], deadline: float) -> socket.socket:
        last_error: Exception | None = None
        while time.monotonic() < deadline:
            try:
                sock = socket.create_connection(address, timeout=1.0)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                return sock
            except OSError as exc:  # peer may not be up yet
                last_error = exc
                time.sleep(0.05)
        raise TransportError(f"could not reach peer at {address[0]}:{address[1]}: {last_error}")

    def _reader_loop(self, conn: socket.socket) -> None:
        try:
            while True:
                header = _recvall(conn, FRAME_HEADER.size)
                magic, source, dest, dest_offset, count = FRAME_HEADER.unpack(header)
                if (magic & _MAGIC_MASK) not in (MAGIC_DATA, MAGIC_CTRL):
                    raise ProtocolError(f"bad frame magic {magic:#x}")
                payload = _recvall(conn, count * (magic & 0xFFFF))
                self._dispatch(Frame(magic, source, dest, dest_offset, count, payload))
        except TransportError as exc:
            if not self._closing:
                self.abort(f"connection to a peer failed: {exc}")
        except OSError:
            if not self._closing:
                self.abort("connection to a peer failed")

    def _send(self, frame: Frame) -> None:
        sock = self._out[frame.dest]
        payload = frame.payload
        if isinstance(payload, np.ndarray):
            payload = memoryview(np.ascontiguousarray(payload)).cast("B")
        header = FRAME_HEADER.pack(frame.magic, frame.source, frame.dest,
                                   frame.dest_offset, frame.count)
        try:
            sock.sendall(header)
            if len(payload):
                sock.sendall(payload)
        except OSError as exc:
            raise TransportError(f"send to worker {frame.dest} failed: {exc}") from exc

    def close(self) -> None:
        self._closing = True
        for sock in self._out.values():
            try:
                sock.close()
            except OSError:
                pass
        for sock in self._in_socks:
            try:
                sock.close()
            except OSError:
                pass
        if self._listener is not None:
            self._listener.close()


def create_tcp_cluster(size: int, host: str = "127.0.0.1",
                       recv_timeout: float = DEFAULT_TIMEOUT) -> list[TcpTransport]:
    """Stand up a localhost TCP cluster on ephemeral ports, one transport per worker."""
    listeners = []
    peers = []
    for _ in range(size):
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((host, 0))
        sock.listen(size)
        listeners.append(sock)
        peers.append(f"{host}:{sock.getsockname()[1]}")
    peers_t = tuple(peers)
    # The mesh handshake blocks until every peer has dialed in, so the
    # transports must come up together.
    results: list[TcpTransport | None] = [None] * size
    errors: list[BaseException] = []

    def _build(w: int) -> None:
        try:
            results[w] = TcpTransport(Endpoint(w, peers_t), recv_timeout,
                                      listener=listeners[w])
        except BaseException as exc:
            errors.append(exc)

    builders = [threading.Thread(target=_build, args=(w,)) for w in range(size)]
    for t in builders:
        t.start()
    for t in builders:
        t.join()
    if errors:
        for built in results:
            if built is not None:
                built.close()
        raise errors[0]
    return [t for t in results if t is not None]
