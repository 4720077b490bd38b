"""Participant-to-participant communication.

Wire format: every frame is ``b"PCM1"``, a one-byte kind, a little-endian u64
payload length and the payload.  Floats are f64 little-endian, counts u32
little-endian, strings u32-length-prefixed UTF-8.

Connections are set up through a token file: the accepting side listens on a
loopback port and writes ``host:port`` to a hashed path under the exchange
directory, the requesting side polls for the file and connects.
"""

from __future__ import annotations

import enum
import hashlib
import logging
import os
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CommError, ConnectionLost, FrameError, HandshakeTimeout
from .mesh import Mesh

log = logging.getLogger(__name__)

MAGIC = b"PCM1"
HEADER = struct.Struct("<4sBQ")
POLL_INTERVAL = 0.01
HANDSHAKE_TIMEOUT = 30.0


class Kind(enum.IntEnum):
    MESH = 1
    FIELD = 2
    CONTROL = 3
    SHUTDOWN = 4


@dataclass(frozen=True)
class Frame:
    kind: int
    payload: bytes = b""


def encode_frame(frame: Frame) -> bytes:
    if frame.kind not in Kind._value2member_map_:
        raise FrameError(f"unknown frame kind {frame.kind}", 4)
    return HEADER.pack(MAGIC, frame.kind, len(frame.payload)) + frame.payload


def _check_header(header: bytes) -> tuple:
    magic, kind, length = HEADER.unpack(header)
    if magic != MAGIC:
        raise FrameError(f"bad magic {magic!r}", 0)
    if kind not in Kind._value2member_map_:
        raise FrameError(f"unknown frame kind {kind}", 4)
    return kind, length


def decode_frame(buf: bytes) -> tuple[Frame, int]:
    """Decode one frame from the start of ``buf``; returns (frame, bytes consumed)."""
    if len(buf) < HEADER.size:
        raise FrameError("truncated header", len(buf))
    kind, length = _check_header(bytes(buf[: HEADER.size]))
    end = HEADER.size + length
    if len(buf) < end:
        raise FrameError(f"truncated payload, expected {length} bytes", len(buf))
    return Frame(kind, bytes(buf[HEADER.size:end])), end


# ----------------------------------------------------------------------
#  Payload bodies
# ----------------------------------------------------------------------


class _Writer:
    def __init__(self):
        self.parts = []

    def u8(self, v):
        self.parts.append(struct.pack("<B", v))

    def u32(self, v):
        self.parts.append(struct.pack("<I", v))

    def string(self, s):
        raw = s.encode("utf-8")
        self.u32(len(raw))
        self.parts.append(raw)

    def f64s(self, arr):
        self.parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    def u32s(self, arr):
        self.parts.append(np.ascontiguousarray(arr, dtype="<u4").tobytes())

    def bytes(self):
        return b"".join(self.parts)


class _Reader:
    def __init__(self, payload):
        self.buf = payload
        self.pos = 0

    def _take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FrameError(f"truncated {what}", HEADER.size + self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self, what="u8"):
        return self._take(1, what)[0]

    def u32(self, what="u32"):
        return struct.unpack("<I", self._take(4, what))[0]

    def string(self, what="string"):
        n = self.u32(what + " length")
        start = HEADER.size + self.pos
        try:
            return self._take(n, what).decode("utf-8")
        except UnicodeDecodeError:
            raise FrameError(f"invalid UTF-8 in {what}", start) from None

    def f64s(self, count, what="floats"):
        return np.frombuffer(self._take(8 * count, what), dtype="<f8").astype(float)

    def u32s(self, count, what="ids"):
        return np.frombuffer(self._take(4 * count, what), dtype="<u4").astype(np.int64)

    def done(self):
        if self.pos != len(self.buf):
            raise FrameError("trailing bytes in payload", HEADER.size + self.pos)


@dataclass(frozen=True, eq=False)
class FieldMessage:
    data: str
    mesh: str
    components: int
    values: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, FieldMessage)
            and (self.data, self.mesh, self.components) == (other.data, other.mesh, other.components)
            and np.array_equal(self.values, other.values)
        )

    def to_frame(self) -> Frame:
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if self.components < 1 or vals.size % self.components:
            raise CommError("field values do not match component count")
        w = _Writer()
        w.string(self.data)
        w.string(self.mesh)
        w.u32(self.components)
        w.u32(vals.size // self.components)
        w.f64s(vals)
        return Frame(Kind.FIELD, w.bytes())

    @classmethod
    def from_frame(cls, frame: Frame):
        r = _Reader(frame.payload)
        data = r.string("data name")
        mesh = r.string("mesh name")
        comps = r.u32("component count")
        n = r.u32("vertex count")
        if comps < 1:
            raise FrameError("component count must be positive", HEADER.size + r.pos - 8)
        vals = r.f64s(n * comps, "field values")
        r.done()
        return cls(data, mesh, comps, vals)


@dataclass(frozen=True)
class ControlMessage:
    window: int
    iteration: int
    converged: bool
    tag: str = ""

    def to_frame(self) -> Frame:
        w = _Writer()
        w.u32(self.window)
        w.u32(self.iteration)
        w.u8(1 if self.converged else 0)
        w.string(self.tag)
        return Frame(Kind.CONTROL, w.bytes())

    @classmethod
    def from_frame(cls, frame: Frame):
        r = _Reader(frame.payload)
        window = r.u32("window index")
        iteration = r.u32("iteration")
        flag = r.u8("converged flag")
        if flag > 1:
            raise FrameError("converged flag must be 0 or 1", HEADER.size + r.pos - 1)
        tag = r.string("tag")
        r.done()
        return cls(window, iteration, bool(flag), tag)


def mesh_to_frame(mesh: Mesh) -> Frame:
    w = _Writer()
    w.string(mesh.name)
    w.u32(mesh.dim)
    w.u32(len(mesh))
    w.f64s(mesh.vertices.reshape(-1))
    w.u32(len(mesh.edges))
    w.u32s(mesh.edges.reshape(-1))
    w.u32(len(mesh.triangles))
    w.u32s(mesh.triangles.reshape(-1))
    return Frame(Kind.MESH, w.bytes())


def mesh_from_frame(frame: Frame) -> Mesh:
    r = _Reader(frame.payload)
    name = r.string("mesh name")
    dim = r.u32("dimension")
    if dim not in (2, 3):
        raise FrameError(f"mesh dimension {dim}", HEADER.size + r.pos - 4)
    n = r.u32("vertex count")
    verts = r.f64s(n * dim, "coordinates").reshape(n, dim)
    ne = r.u32("edge count")
    edges = r.u32s(2 * ne, "edges").reshape(ne, 2)
    nt = r.u32("triangle count")
    tris = r.u32s(3 * nt, "triangles").reshape(nt, 3)
    r.done()
    return Mesh(name, verts, edges, tris)


SHUTDOWN = Frame(Kind.SHUTDOWN, b"")


# ----------------------------------------------------------------------
#  Channel
# ----------------------------------------------------------------------


class Channel:
    """Ordered, reliable frame stream to one peer over a connected socket.

    Sends are queued and written by a background thread so that both peers
    may send before receiving; receives block until a whole frame arrived.
    """

    def __init__(self, sock: socket.socket, local="", remote=""):
        self.sock = sock
        self.local = local
        self.remote = remote
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._queue = queue.Queue()
        self._error = None
        self._closed = False
        self._writer = threading.Thread(target=self._write_loop, daemon=True)
        self._writer.start()

    def _write_loop(self):
        while True:
            data = self._queue.get()
            try:
                if data is None:
                    return
                if self._error is None:
                    self.sock.sendall(data)
            except OSError as exc:
                self._error = exc
            finally:
                self._queue.task_done()

    def _raise_pending(self):
        if self._error is not None:
            raise ConnectionLost(f"connection lost: {self._error}")

    def send_frame(self, frame: Frame) -> None:
        if self._closed:
            raise CommError("channel is closed")
        self._raise_pending()
        self._queue.put(encode_frame(frame))

    def flush(self) -> None:
        self._queue.join()
        self._raise_pending()

    def _recv_exact(self, n, frame_start):
        chunks = []
        got = 0
        while got < n:
            try:
                chunk = self.sock.recv(min(n - got, 1 << 20))
            except socket.timeout:
                raise
            except OSError as exc:
                raise ConnectionLost(f"connection lost: {exc}") from None
            if not chunk:
                raise ConnectionLost(
                    f"connection lost: peer closed after {frame_start + got} bytes of frame"
                    if frame_start + got
                    else "connection lost: peer closed"
                )
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def recv_frame(self, timeout=None) -> Frame:
        if self._closed:
            raise CommError("channel is closed")
        self.sock.settimeout(timeout)
        try:
            header = self._recv_exact(HEADER.size, 0)
            kind, length = _check_header(header)
            payload = self._recv_exact(length, HEADER.size) if length else b""
        except socket.timeout:
            raise CommError("timed out waiting for peer") from None
        finally:
            self.sock.settimeout(None)
        return Frame(kind, payload)

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        self._queue.put(None)
        self._writer.join(timeout=HANDSHAKE_TIMEOUT)
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def send_frame(channel: Channel, frame: Frame) -> None:
    channel.send_frame(frame)


def recv_frame(channel: Channel, timeout=None) -> Frame:
    return channel.recv_frame(timeout)


# ----------------------------------------------------------------------
#  Handshake
# ----------------------------------------------------------------------


def token_path(exchange_dir, src: str, dst: str, rank_a: int = 0, rank_b: int = 0) -> Path:
    """Hashed location of the connection token for one rank pair."""
    if not src or not dst:
        raise CommError("participant names must be non-empty")
    key = f"{src}-{dst}-{rank_a}-{rank_b}"
    bucket = hashlib.sha256(key.encode("utf-8")).hexdigest()[:2]
    return Path(exchange_dir) / "precice-run" / bucket / f"{key}.address"


def accept(exchange_dir, src: str, dst: str, timeout=HANDSHAKE_TIMEOUT, host="127.0.0.1") -> Channel:
    """Acceptor side: publish an address token and wait for the requester."""
    path = token_path(exchange_dir, src, dst)
    path.parent.mkdir(parents=True, exist_ok=True)
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((host, 0))
        server.listen(1)
        port = server.getsockname()[1]
        tmp = path.with_name(path.name + f".{os.getpid()}.tmp")
        tmp.write_text(f"{host}:{port}\n", encoding="ascii")
        os.replace(tmp, path)
        server.settimeout(timeout)
        try:
            conn, _ = server.accept()
        except socket.timeout:
            raise HandshakeTimeout(f"handshake timeout: {src} did not connect to {dst}") from None
        finally:
            try:
                path.unlink()
            except FileNotFoundError:
                pass
        conn.settimeout(None)
        return Channel(conn, local=dst, remote=src)
    finally:
        server.close()


def request(exchange_dir, src: str, dst: str, timeout=HANDSHAKE_TIMEOUT,
            poll=POLL_INTERVAL) -> Channel:
    """Requester side: poll for the token and connect to the published address."""
    path = token_path(exchange_dir, src, dst)
    deadline = time.monotonic() + timeout
    while True:
        try:
            text = path.read_text(encoding="ascii").strip()
            host, port = text.rsplit(":", 1)
            sock = socket.create_connection((host, int(port)), timeout=max(poll, 1.0))
            sock.settimeout(None)
            return Channel(sock, local=src, remote=dst)
        except (FileNotFoundError, ValueError, ConnectionRefusedError, socket.timeout):
            pass
        except OSError as exc:
            log.debug("connect attempt failed: %s", exc)
        if time.monotonic() >= deadline:
            raise HandshakeTimeout(f"handshake timeout: no token from {dst} at {path}")
        time.sleep(poll)


def connect(exchange_dir, local: str, src: str, dst: str, timeout=HANDSHAKE_TIMEOUT) -> Channel:
    """Open the channel between ``src`` (requester) and ``dst`` (acceptor) as ``local``."""
    if local == src:
        return request(exchange_dir, src, dst, timeout)
    if local == dst:
        return accept(exchange_dir, src, dst, timeout)
    raise CommError(f"{local!r} is neither end of the {src}->{dst} connection")


# ----------------------------------------------------------------------
#  Connection map deduction
# ----------------------------------------------------------------------


def _bbox(points, margin):
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return None
    pts = pts.reshape(len(pts), -1)
    return pts.min(axis=0) - margin, pts.max(axis=0) + margin


def bbox_candidates(partitions_a, partitions_b, margin=0.0) -> set:
    """Rank pairs whose margin-inflated bounding boxes intersect."""
    if margin < 0:
        raise CommError("margin must be non-negative")
    boxes_a = [_bbox(p, margin) for p in partitions_a]
    boxes_b = [_bbox(p, margin) for p in partitions_b]
    out = set()
    for i, ba in enumerate(boxes_a):
        if ba is None:
            continue
        for j, bb in enumerate(boxes_b):
            if bb is None:
                continue
            if np.all(ba[0] <= bb[1]) and np.all(bb[0] <= ba[1]):
                out.add((i, j))
    return out


def connection_map(partitions_a, partitions_b, stencil) -> set:
    """Rank pairs (a, b) where a vertex owned by b-rank needs a vertex owned by a-rank."""
    owner_a = {}
    for rank, ids in enumerate(partitions_a):
        for v in ids:
            owner_a[v] = rank
    owner_b = {}
    for rank, ids in enumerate(partitions_b):
        for v in ids:
            owner_b[v] = rank
    out = set()
    for u, needed in stencil.items():
        if u not in owner_b:
            raise CommError(f"vertex {u!r} is not owned by any rank of the receiving side")
        for v in needed:
            if v not in owner_a:
                raise CommError(f"vertex {v!r} is not owned by any rank of the sending side")
            out.add((owner_a[v], owner_b[u]))
    return out
