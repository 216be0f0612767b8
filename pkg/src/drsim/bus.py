"""Persistent topic-based publish/subscribe bus.

The core is an in-process MessageBus backed by an append-only JSON-lines
log: every publish is appended (and flushed) before it is acknowledged, and
replaying the log reconstructs every topic.  Delivery is at-least-once with
per-topic ordering; consumers deduplicate.

A thin wire layer exposes the same bus over a local stream socket using
4-byte big-endian length-prefixed UTF-8 JSON frames with ops
publish | subscribe | deliver | ack.
"""

from __future__ import annotations

import json
import os
import socket
import struct
import threading
from dataclasses import dataclass
from typing import Callable

from .simclock import WallClock

MAX_PAYLOAD_BYTES = 256 * 1024
_MAX_FRAME_BYTES = 512 * 1024


class BusError(Exception):
    pass


class PayloadTooLargeError(BusError):
    pass


class BusUnreachableError(BusError):
    """The bus endpoint cannot be reached; callers may buffer and retry."""


@dataclass(frozen=True)
class Envelope:
    topic: str
    seq: int
    payload: dict
    published_at: int


def check_topic(topic: str) -> None:
    if not topic or any(not seg or "*" in seg for seg in topic.split("/")):
        raise BusError(f"malformed topic {topic!r}")


def topic_matches(pattern: str, topic: str) -> bool:
    """Pattern segments match topic segments; '*' matches any one segment."""
    pseg = pattern.split("/")
    tseg = topic.split("/")
    if len(pseg) != len(tseg):
        return False
    return all(p == "*" or p == t for p, t in zip(pseg, tseg))


class _Subscription:
    __slots__ = ("pattern", "callback", "active")

    def __init__(self, pattern: str, callback: Callable[[Envelope], None]):
        self.pattern = pattern
        self.callback = callback
        self.active = True

    def cancel(self) -> None:
        self.active = False


class MessageBus:
    """In-process bus core; safe under concurrent publishes.

    With log_path set, publishes are appended and flushed before being
    acknowledged; pass fsync=True to force them to stable storage as well
    (slower, survives machine crash rather than just process death).
    """

    def __init__(self, log_path=None, clock=None, fsync: bool = False):
        self._lock = threading.RLock()
        self._clock = clock or WallClock()
        self._fsync = fsync
        self._topics: dict[str, list[Envelope]] = {}
        self._subs: list[_Subscription] = []
        self._log_path = log_path
        self._log = None
        if log_path is not None:
            self._replay_log()
            self._log = open(log_path, "a", encoding="utf-8")

    def _replay_log(self) -> None:
        if not os.path.exists(self._log_path):
            return
        with open(self._log_path, "r", encoding="utf-8") as f:
            for line in f:
                if not line.endswith("\n"):
                    break  # torn tail write; it was never acknowledged
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    break
                env = Envelope(
                    topic=rec["topic"],
                    seq=rec["seq"],
                    payload=rec["payload"],
                    published_at=rec["published_at"],
                )
                self._topics.setdefault(env.topic, []).append(env)

    def publish(self, topic: str, payload: dict) -> Envelope:
        check_topic(topic)
        encoded = json.dumps(payload, separators=(",", ":"))
        if len(encoded.encode("utf-8")) > MAX_PAYLOAD_BYTES:
            raise PayloadTooLargeError(f"payload exceeds {MAX_PAYLOAD_BYTES} bytes")
        with self._lock:
            history = self._topics.setdefault(topic, [])
            env = Envelope(
                topic=topic,
                seq=len(history) + 1,
                payload=payload,
                published_at=self._clock.now_ms(),
            )
            if self._log is not None:
                record = {
                    "op": "publish",
                    "topic": env.topic,
                    "seq": env.seq,
                    "payload": env.payload,
                    "published_at": env.published_at,
                    "appended_at": int(WallClock().now_ms()),
                }
                self._log.write(json.dumps(record, separators=(",", ":")) + "\n")
                self._log.flush()
                if self._fsync:
                    os.fsync(self._log.fileno())
            history.append(env)
            subs = [s for s in self._subs if s.active and topic_matches(s.pattern, topic)]
        for sub in subs:
            sub.callback(env)
        return env

    def subscribe(
        self,
        pattern: str,
        callback: Callable[[Envelope], None],
        from_seq: int | None = None,
    ) -> _Subscription:
        """Deliver matching envelopes to callback, in per-topic seq order.

        With from_seq, retained envelopes with seq >= from_seq are replayed
        first (catch-up), interleaved across topics by publish time.
        """
        sub = _Subscription(pattern, callback)
        with self._lock:
            backlog = []
            if from_seq is not None:
                for topic, history in self._topics.items():
                    if topic_matches(pattern, topic):
                        backlog.extend(e for e in history if e.seq >= from_seq)
                backlog.sort(key=lambda e: (e.published_at, e.topic, e.seq))
            self._subs.append(sub)
        for env in backlog:
            if sub.active:
                sub.callback(env)
        return sub

    def read(self, topic: str, from_seq: int = 1) -> list[Envelope]:
        with self._lock:
            return [e for e in self._topics.get(topic, []) if e.seq >= from_seq]

    def topics(self) -> list[str]:
        with self._lock:
            return sorted(self._topics)

    def last_seq(self, topic: str) -> int:
        with self._lock:
            history = self._topics.get(topic, [])
            return history[-1].seq if history else 0

    def close(self) -> None:
        with self._lock:
            if self._log is not None:
                self._log.close()
                self._log = None


# ---------------------------------------------------------------------------
# Wire layer
# ---------------------------------------------------------------------------

def send_frame(sock: socket.socket, doc: dict) -> None:
    data = json.dumps(doc, separators=(",", ":")).encode("utf-8")
    sock.sendall(struct.pack(">I", len(data)) + data)


def recv_frame(sock: socket.socket) -> dict | None:
    header = _recv_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length > _MAX_FRAME_BYTES:
        raise BusError(f"frame of {length} bytes exceeds the limit")
    body = _recv_exact(sock, length)
    if body is None:
        return None
    return json.loads(body.decode("utf-8"))


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    chunks = b""
    while len(chunks) < n:
        try:
            chunk = sock.recv(n - len(chunks))
        except OSError:
            return None
        if not chunk:
            return None
        chunks += chunk
    return chunks


class BusServer:
    """Serves a MessageBus over TCP on the loopback interface."""

    def __init__(self, bus: MessageBus, host: str = "127.0.0.1", port: int = 0):
        self.bus = bus
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(64)
        self.host, self.port = self._listener.getsockname()
        self._conns: list[socket.socket] = []
        self._lock = threading.Lock()
        self._closed = False
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        while not self._closed:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._lock:
                self._conns.append(conn)
            threading.Thread(target=self._serve, args=(conn,), daemon=True).start()

    def _serve(self, conn: socket.socket) -> None:
        write_lock = threading.Lock()
        subs = []

        def deliver(env: Envelope) -> None:
            frame = {
                "op": "deliver",
                "topic": env.topic,
                "seq": env.seq,
                "payload": env.payload,
                "published_at": env.published_at,
            }
            try:
                with write_lock:
                    send_frame(conn, frame)
            except OSError:
                for s in subs:
                    s.cancel()

        try:
            while True:
                frame = recv_frame(conn)
                if frame is None:
                    return
                op = frame.get("op")
                if op == "publish":
                    try:
                        env = self.bus.publish(frame["topic"], frame["payload"])
                        ack = {
                            "op": "ack",
                            "topic": env.topic,
                            "seq": env.seq,
                            "published_at": env.published_at,
                        }
                    except (BusError, KeyError) as exc:
                        ack = {"op": "ack", "topic": frame.get("topic"), "error": str(exc)}
                    with write_lock:
                        send_frame(conn, ack)
                elif op == "subscribe":
                    sub = self.bus.subscribe(
                        frame["topic"], deliver, from_seq=frame.get("from_seq")
                    )
                    subs.append(sub)
                    with write_lock:
                        send_frame(conn, {"op": "ack", "topic": frame["topic"]})
                else:
                    with write_lock:
                        send_frame(conn, {"op": "ack", "error": f"unknown op {op!r}"})
        finally:
            for s in subs:
                s.cancel()
            conn.close()

    def close(self) -> None:
        self._closed = True
        try:
            self._listener.close()
        except OSError:
            pass
        with self._lock:
            for conn in self._conns:
                try:
                    conn.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                conn.close()


class BusClient:
    """TCP client with the publish/subscribe interface of MessageBus.

    publish() blocks until the server acknowledges the durable append.
    Subscription callbacks run on a dedicated dispatch thread (never the
    socket reader), so a callback may itself publish without deadlocking.
    """

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self._addr = (host, port)
        try:
            self._sock = socket.create_connection(self._addr, timeout=timeout)
        except OSError as exc:
            raise BusUnreachableError(str(exc)) from exc
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock.settimeout(None)
        self._write_lock = threading.Lock()
        self._ack_cond = threading.Condition()
        self._acks: list[dict] = []
        self._callbacks: list[tuple[str, Callable[[Envelope], None]]] = []
        self._inbox: list[Envelope] = []
        self._inbox_cond = threading.Condition()
        self._closed = False
        self._timeout = timeout
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        self._dispatcher = threading.Thread(target=self._dispatch_loop, daemon=True)
        self._dispatcher.start()

    def _read_loop(self) -> None:
        while True:
            try:
                frame = recv_frame(self._sock)
            except (BusError, OSError):
                frame = None
            if frame is None:
                with self._ack_cond:
                    self._closed = True
                    self._ack_cond.notify_all()
                with self._inbox_cond:
                    self._inbox_cond.notify_all()
                return
            if frame.get("op") == "deliver":
                env = Envelope(
                    topic=frame["topic"],
                    seq=frame["seq"],
                    payload=frame["payload"],
                    published_at=frame["published_at"],
                )
                with self._inbox_cond:
                    self._inbox.append(env)
                    self._inbox_cond.notify()
            else:  # ack
                with self._ack_cond:
                    self._acks.append(frame)
                    self._ack_cond.notify_all()

    def _dispatch_loop(self) -> None:
        while True:
            with self._inbox_cond:
                while not self._inbox and not self._closed:
                    self._inbox_cond.wait()
                if self._closed and not self._inbox:
                    return
                env = self._inbox.pop(0)
            for pattern, callback in list(self._callbacks):
                if topic_matches(pattern, env.topic):
                    try:
                        callback(env)
                    except Exception:  # consumer errors must not stall delivery
                        pass

    def _roundtrip(self, frame: dict) -> dict:
        with self._write_lock:
            if self._closed:
                raise BusUnreachableError("bus connection closed")
            try:
                send_frame(self._sock, frame)
            except OSError as exc:
                raise BusUnreachableError(str(exc)) from exc
            with self._ack_cond:
                while not self._acks and not self._closed:
                    if not self._ack_cond.wait(timeout=self._timeout):
                        raise BusUnreachableError("timed out waiting for ack")
                if self._closed and not self._acks:
                    raise BusUnreachableError("bus connection closed")
                return self._acks.pop(0)

    def publish(self, topic: str, payload: dict) -> Envelope:
        ack = self._roundtrip({"op": "publish", "topic": topic, "payload": payload})
        if "error" in ack:
            raise BusError(ack["error"])
        return Envelope(topic=topic, seq=ack["seq"], payload=payload,
                        published_at=ack["published_at"])

    def subscribe(
        self,
        pattern: str,
        callback: Callable[[Envelope], None],
        from_seq: int | None = None,
    ) -> None:
        # Register before the wire roundtrip so catch-up deliveries (which
        # may arrive ahead of the subscribe ack) are not dropped.
        self._callbacks.append((pattern, callback))
        frame = {"op": "subscribe", "topic": pattern}
        if from_seq is not None:
            frame["from_seq"] = from_seq
        ack = self._roundtrip(frame)
        if "error" in ack:
            raise BusError(ack["error"])

    def close(self) -> None:
        with self._ack_cond:
            self._closed = True
            self._ack_cond.notify_all()
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
