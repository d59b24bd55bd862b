"""Brokerless TCP pub/sub between nodes.

Each node listens on one port and pushes every published message to its
configured peers (static topology, no discovery). One reader thread per
inbound connection, one writer thread per peer; consumers drain an inbox
queue of decoded messages. Subscribers see seq strictly increasing per
(node, type): late or repeated frames are dropped and counted, gaps are
counted, nothing is ever reordered.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError
from .wire import Message, MsgType, decode_message, encode_message

__all__ = [
    "NodeSpec",
    "load_topology",
    "NodeStats",
    "Node",
    "loopback_channel",
]

log = logging.getLogger("minilead.protocol")

HEARTBEAT_HZ = 10.0


@dataclass(frozen=True)
class NodeSpec:
    """One entry of the topology file; node_id is the array index."""

    name: str
    listen: str
    peers: tuple[str, ...]
    node_id: int


def _parse_addr(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ConfigError(f"address must look like host:port, got {addr!r}")
    return host, int(port)


def load_topology(path: str | Path) -> list[NodeSpec]:
    """Read ``{"nodes": [{"name", "listen", "peers": [...]}]}``."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict) or not isinstance(raw.get("nodes"), list):
        raise ConfigError(f"{path}: topology must contain a nodes array")
    specs = []
    names = set()
    for index, item in enumerate(raw["nodes"]):
        if not isinstance(item, dict) or set(item) != {"name", "listen", "peers"}:
            raise ConfigError(
                f"{path}: nodes[{index}] must have exactly name, listen, peers"
            )
        if item["name"] in names:
            raise ConfigError(f"{path}: duplicate node name {item['name']!r}")
        names.add(item["name"])
        _parse_addr(item["listen"])
        for peer in item["peers"]:
            _parse_addr(peer)
        if index > 0xFF:
            raise ConfigError(f"{path}: at most 256 nodes supported")
        specs.append(NodeSpec(
            name=item["name"],
            listen=item["listen"],
            peers=tuple(item["peers"]),
            node_id=index,
        ))
    return specs


@dataclass
class NodeStats:
    delivered: int = 0
    crc_errors: int = 0
    desync_errors: int = 0
    seq_gaps: int = 0
    stale_drops: int = 0
    outbound_drops: int = 0
    inbox_drops: int = 0


class Node:
    """One pub/sub endpoint: a listener, writers to peers, an inbox.

    ``listen=None`` makes a publish-only node. Port 0 binds an ephemeral
    port, readable as ``listen_port`` after ``start()``.
    """

    def __init__(self, name: str, node_id: int, listen: str | None = None,
                 peers=(), heartbeat_hz: float = HEARTBEAT_HZ,
                 inbox_limit: int = 10000):
        if not 0 <= node_id <= 0xFF:
            raise ConfigError(f"node_id {node_id} out of u8 range")
        self.name = name
        self.node_id = node_id
        self._listen = _parse_addr(listen) if listen else None
        self._peer_addrs = [_parse_addr(p) for p in peers]
        self._heartbeat_period = 1.0 / heartbeat_hz if heartbeat_hz > 0 else None
        self.inbox: "queue.Queue[Message]" = queue.Queue(maxsize=inbox_limit)
        self.stats = NodeStats()
        self.listen_port: int | None = None
        self._seq: dict[MsgType, int] = {}
        self._seq_lock = threading.Lock()
        self._last_seen: dict[tuple[int, MsgType], int] = {}
        self._peer_queues: list[queue.Queue] = [
            queue.Queue(maxsize=1024) for _ in self._peer_addrs
        ]
        self._threads: list[threading.Thread] = []
        self._listener: socket.socket | None = None
        self._stop = threading.Event()
        self._started = False

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> "Node":
        if self._started:
            raise ConfigError(f"node {self.name} already started")
        self._started = True
        if self._listen is not None:
            self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            self._listener.bind(self._listen)
            self._listener.listen(16)
            self._listener.settimeout(0.2)
            self.listen_port = self._listener.getsockname()[1]
            self._spawn(self._accept_loop, "accept")
        for index in range(len(self._peer_addrs)):
            self._spawn(self._writer_loop, f"writer{index}", index)
        if self._heartbeat_period is not None:
            self._spawn(self._heartbeat_loop, "heartbeat")
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._listener is not None:
            self._listener.close()
        for thread in self._threads:
            thread.join(timeout=2.0)

    def __enter__(self) -> "Node":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def _spawn(self, target, label: str, *args) -> None:
        thread = threading.Thread(
            target=target, args=args, name=f"{self.name}-{label}", daemon=True
        )
        thread.start()
        self._threads.append(thread)

    # -- publishing --------------------------------------------------------

    def next_seq(self, msg_type: MsgType) -> int:
        with self._seq_lock:
            seq = self._seq.get(msg_type, 0)
            self._seq[msg_type] = seq + 1
        return seq

    def make_message(self, msg_type: MsgType, **payload) -> Message:
        return Message(
            msg_type=msg_type,
            node_id=self.node_id,
            seq=self.next_seq(msg_type),
            t_mono_us=time.monotonic_ns() // 1000,
            **payload,
        )

    def publish(self, msg_type: MsgType, **payload) -> Message:
        """Stamp seq and time, then push to every peer. Returns the message."""
        message = self.make_message(msg_type, **payload)
        data = encode_message(message)
        for peer_queue in self._peer_queues:
            try:
                peer_queue.put_nowait(data)
            except queue.Full:
                # keep recency: drop the oldest frame, not the newest
                try:
                    peer_queue.get_nowait()
                    self.stats.outbound_drops += 1
                except queue.Empty:
                    pass
                try:
                    peer_queue.put_nowait(data)
                except queue.Full:
                    self.stats.outbound_drops += 1
        return message

    # -- consuming ---------------------------------------------------------

    def drain(self, max_items: int = 1000) -> list[Message]:
        """Pop up to max_items decoded messages without blocking."""
        out = []
        for _ in range(max_items):
            try:
                out.append(self.inbox.get_nowait())
            except queue.Empty:
                break
        return out

    def take(self, timeout: float | None = None) -> Message | None:
        """Block up to timeout for one message; None when nothing arrived."""
        try:
            return self.inbox.get(timeout=timeout)
        except queue.Empty:
            return None

    # -- internals ---------------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._spawn(self._reader_loop, "reader", conn)

    def _reader_loop(self, conn: socket.socket) -> None:
        buf = b""
        conn.settimeout(0.2)
        with conn:
            while not self._stop.is_set():
                try:
                    chunk = conn.recv(65536)
                except socket.timeout:
                    continue
                except OSError:
                    return
                if not chunk:
                    return
                result = decode_message(buf + chunk)
                buf = result.remainder
                self.stats.crc_errors += result.crc_errors
                self.stats.desync_errors += result.desync_errors
                for message in result.messages:
                    self._deliver(message)

    def _deliver(self, message: Message) -> None:
        key = (message.node_id, message.msg_type)
        last = self._last_seen.get(key)
        if last is not None:
            if message.seq <= last:
                self.stats.stale_drops += 1
                return
            if message.seq > last + 1:
                self.stats.seq_gaps += message.seq - last - 1
        self._last_seen[key] = message.seq
        try:
            self.inbox.put_nowait(message)
            self.stats.delivered += 1
        except queue.Full:
            self.stats.inbox_drops += 1

    def _writer_loop(self, index: int) -> None:
        addr = self._peer_addrs[index]
        outbound = self._peer_queues[index]
        sock: socket.socket | None = None
        while not self._stop.is_set():
            if sock is None:
                try:
                    sock = socket.create_connection(addr, timeout=1.0)
                    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                except OSError:
                    sock = None
                    self._stop.wait(0.2)
                    continue
            try:
                data = outbound.get(timeout=0.1)
            except queue.Empty:
                continue
            try:
                sock.sendall(data)
            except OSError:
                sock.close()
                sock = None
        if sock is not None:
            sock.close()

    def _heartbeat_loop(self) -> None:
        while not self._stop.wait(self._heartbeat_period):
            self.publish(MsgType.HEARTBEAT)


class _LoopbackEnd:
    """In-process byte channel end; same framing as the TCP path."""

    def __init__(self):
        self._rx: deque[bytes] = deque()
        self._lock = threading.Lock()
        self.peer: "_LoopbackEnd | None" = None

    def write(self, data: bytes) -> None:
        with self.peer._lock:
            self.peer._rx.append(bytes(data))

    def read(self) -> bytes:
        with self._lock:
            out = b"".join(self._rx)
            self._rx.clear()
            return out


def loopback_channel() -> tuple[_LoopbackEnd, _LoopbackEnd]:
    """Two connected in-process endpoints carrying raw frame bytes."""
    a, b = _LoopbackEnd(), _LoopbackEnd()
    a.peer, b.peer = b, a
    return a, b
