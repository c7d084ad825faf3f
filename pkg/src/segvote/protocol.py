"""Line-JSON wire protocol client (v1) for external scorers and taggers.

One JSON object per line, UTF-8, over a child process's stdio or a TCP
stream. The conversation starts with a handshake:

    -> {"hello": "segvote-scorer", "version": 1}
    <- {"ack": "segvote-scorer", "version": 1, "scorer_id": "<string>"}

then any number of requests, each carrying a client-chosen ``id``:

    -> {"id": "<string>", ...}
    <- {"id": "<same>", ...}          # or {"id": "<same>", "error": "<string>"}

Requests may be pipelined; the peer must reply in request order.
"""

from __future__ import annotations

import json
import os
import select
import shlex
import socket
import subprocess
import threading
import time

from .errors import (
    HandshakeTimeout,
    ScorerProtocolError,
    ScorerUnavailable,
    VersionMismatch,
)

PROTOCOL_NAME = "segvote-scorer"
PROTOCOL_VERSION = 1

_POLL_INTERVAL = 0.25


class _StdioChannel:
    """Line transport over a child process's stdin/stdout."""

    def __init__(self, argv: list[str]):
        try:
            self._proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        except OSError as exc:
            raise ScorerUnavailable(f"cannot start {argv[0]!r}: {exc}") from exc
        self._buf = b""
        self._fd = self._proc.stdout.fileno()

    def send_line(self, data: bytes) -> None:
        try:
            self._proc.stdin.write(data + b"\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, ValueError, OSError) as exc:
            raise ScorerUnavailable(f"peer stdin closed: {exc}") from exc

    def recv_line(self, timeout: float) -> bytes:
        deadline = time.monotonic() + timeout
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = self._buf[:nl]
                self._buf = self._buf[nl + 1:]
                return line
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError(f"no reply within {timeout:g}s")
            ready, _, _ = select.select([self._fd], [], [], min(remaining, _POLL_INTERVAL))
            if ready:
                chunk = os.read(self._fd, 65536)
                if not chunk:
                    code = self._proc.poll()
                    raise ScorerUnavailable(f"peer closed its output stream (exit code {code})")
                self._buf += chunk

    def close(self) -> None:
        for stream in (self._proc.stdin, self._proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        try:
            self._proc.wait(timeout=0.5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()


class _TcpChannel:
    """Line transport over a TCP connection."""

    def __init__(self, host: str, port: int, timeout: float):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ScorerUnavailable(f"cannot connect to {host}:{port}: {exc}") from exc
        self._buf = b""

    def send_line(self, data: bytes) -> None:
        try:
            self._sock.sendall(data + b"\n")
        except OSError as exc:
            raise ScorerUnavailable(f"peer connection lost: {exc}") from exc

    def recv_line(self, timeout: float) -> bytes:
        deadline = time.monotonic() + timeout
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = self._buf[:nl]
                self._buf = self._buf[nl + 1:]
                return line
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError(f"no reply within {timeout:g}s")
            self._sock.settimeout(min(remaining, _POLL_INTERVAL))
            try:
                chunk = self._sock.recv(65536)
            except socket.timeout:
                continue
            except OSError as exc:
                raise ScorerUnavailable(f"peer connection lost: {exc}") from exc
            if not chunk:
                raise ScorerUnavailable("peer closed the connection")
            self._buf += chunk

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


def open_channel(target: str, timeout: float = 10.0):
    """Open a transport from a selector: ``exec:CMD`` or ``tcp:HOST:PORT``."""
    if target.startswith("exec:"):
        argv = shlex.split(target[len("exec:"):])
        if not argv:
            raise ValueError("empty exec command")
        return _StdioChannel(argv)
    if target.startswith("tcp:"):
        host, _, port = target[len("tcp:"):].rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"bad tcp selector {target!r}, expected tcp:HOST:PORT")
        return _TcpChannel(host, int(port), timeout)
    raise ValueError(f"unknown scorer selector {target!r}, expected exec:... or tcp:...")


class WireClient:
    """Serial request/reply client over a line transport.

    Calls are one-in-flight (a lock serializes them); pipelined batches go
    through :meth:`request_many`, which writes all requests before reading
    the order-preserved replies.
    """

    def __init__(self, channel, timeout: float = 10.0):
        self._channel = channel
        self._timeout = timeout
        self._lock = threading.Lock()
        self._next_id = 0
        self.peer_id: str | None = None

    def handshake(self) -> str:
        hello = {"hello": PROTOCOL_NAME, "version": PROTOCOL_VERSION}
        with self._lock:
            self._channel.send_line(json.dumps(hello).encode("utf-8"))
            try:
                line = self._channel.recv_line(self._timeout)
            except TimeoutError as exc:
                raise HandshakeTimeout(str(exc)) from exc
        ack = self._parse(line)
        if ack.get("version") != PROTOCOL_VERSION:
            raise VersionMismatch(PROTOCOL_VERSION, ack.get("version"))
        if ack.get("ack") != PROTOCOL_NAME:
            raise ScorerProtocolError(f"bad handshake ack: {ack!r}")
        peer_id = ack.get("scorer_id")
        if not isinstance(peer_id, str) or not peer_id:
            raise ScorerProtocolError(f"handshake ack lacks a scorer_id: {ack!r}")
        self.peer_id = peer_id
        return peer_id

    @staticmethod
    def _parse(line: bytes) -> dict:
        try:
            obj = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ScorerProtocolError(f"unparseable reply line: {line[:200]!r}") from exc
        if not isinstance(obj, dict):
            raise ScorerProtocolError(f"reply is not a JSON object: {line[:200]!r}")
        return obj

    def _take_id(self) -> str:
        rid = str(self._next_id)
        self._next_id += 1
        return rid

    def _recv_reply(self, rid: str, raise_on_error: bool) -> dict:
        try:
            reply = self._parse(self._channel.recv_line(self._timeout))
        except TimeoutError as exc:
            raise ScorerUnavailable(str(exc)) from exc
        if reply.get("id") != rid:
            raise ScorerProtocolError(f"reply id {reply.get('id')!r} does not match request id {rid!r}")
        if raise_on_error and "error" in reply:
            raise ScorerProtocolError(f"peer error for request {rid}: {reply['error']}")
        return reply

    def request(self, raise_on_error: bool = True, **fields) -> dict:
        with self._lock:
            rid = self._take_id()
            self._channel.send_line(json.dumps({"id": rid, **fields}, ensure_ascii=False).encode("utf-8"))
            return self._recv_reply(rid, raise_on_error)

    def request_many(self, payloads: list[dict], raise_on_error: bool = True) -> list[dict]:
        """Pipelined batch: all requests written first, replies read in order."""
        with self._lock:
            rids = []
            for payload in payloads:
                rid = self._take_id()
                rids.append(rid)
                self._channel.send_line(
                    json.dumps({"id": rid, **payload}, ensure_ascii=False).encode("utf-8")
                )
            return [self._recv_reply(rid, raise_on_error) for rid in rids]

    def close(self) -> None:
        self._channel.close()


def connect(target: str, timeout: float = 10.0) -> WireClient:
    """Open a channel, run the handshake, return the ready client."""
    channel = open_channel(target, timeout)
    client = WireClient(channel, timeout)
    try:
        client.handshake()
    except Exception:
        channel.close()
        raise
    return client
