"""Wire protocol for driving a remote trainer as the environment.

Newline-delimited JSON, one message per line, over stdio or a TCP socket.
The controller is the server: the trainer connects, says hello, reports its
initial metrics, then answers each `decide` with a `result` until the
controller sends `shutdown`. Sequence numbers increase strictly per direction.

Message shapes (field names are the contract):

    hello     {type, seq, protocol_version, catalog_digest}
    hello_ack {type, seq, protocol_version, catalog_digest}
    observe   {type, seq, metrics{map_val, loss_train, loss_val,
                                  grad_norm, rel_update_mag, texture_richness}}
    decide    {type, seq, config{aug, opt, lrs, loss}}   strategy names as strings
    result    {type, seq, metrics, terminal}
    shutdown  {type, seq}
    error     {type, seq, code, detail}

`observe`/`result` metrics may additionally carry rare_f1/head_f1/mid_f1/
tail_f1; they default to 0.0 when absent.
"""
from __future__ import annotations

import json
import select
import socket
import sys
from dataclasses import dataclass

from .catalog import Catalog, JointConfig
from .env.base import EnvironmentInterface, MetricsReport

__all__ = [
    "PROTOCOL_VERSION",
    "ProtocolError",
    "encode",
    "decode",
    "LineChannel",
    "stdio_channel",
    "tcp_listen_channel",
    "RemoteEnv",
    "serve",
]

PROTOCOL_VERSION = "1"
STEP_TIMEOUT = 300.0

REQUIRED_METRIC_KEYS = (
    "map_val",
    "loss_train",
    "loss_val",
    "grad_norm",
    "rel_update_mag",
    "texture_richness",
)
OPTIONAL_METRIC_KEYS = ("rare_f1", "head_f1", "mid_f1", "tail_f1")
CONFIG_KEYS = ("aug", "opt", "lrs", "loss")

_FIELDS_BY_TYPE = {
    "hello": ("protocol_version", "catalog_digest"),
    "hello_ack": ("protocol_version", "catalog_digest"),
    "observe": ("metrics",),
    "decide": ("config",),
    "result": ("metrics", "terminal"),
    "shutdown": (),
    "error": ("code", "detail"),
}


class ProtocolError(Exception):
    def __init__(self, code: str, detail: str):
        super().__init__(f"{code}: {detail}")
        self.code = code
        self.detail = detail


def encode(msg: dict) -> str:
    """Canonical single-line encoding (no trailing newline)."""
    validate_message(msg)
    return json.dumps(msg, separators=(",", ":"), sort_keys=True)


def decode(line: str) -> dict:
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError("parse", f"not valid JSON: {exc}") from exc
    if not isinstance(msg, dict):
        raise ProtocolError("parse", "message must be a JSON object")
    validate_message(msg)
    return msg


def validate_message(msg: dict) -> None:
    mtype = msg.get("type")
    if mtype not in _FIELDS_BY_TYPE:
        raise ProtocolError("schema", f"unknown message type {mtype!r}")
    seq = msg.get("seq")
    if not isinstance(seq, int) or isinstance(seq, bool) or seq < 0:
        raise ProtocolError("schema", f"{mtype}: missing or invalid seq")
    required = _FIELDS_BY_TYPE[mtype]
    for name in required:
        if name not in msg:
            raise ProtocolError("schema", f"{mtype}: missing field {name!r}")
    extra = set(msg) - {"type", "seq", *required}
    if extra:
        raise ProtocolError("schema", f"{mtype}: unexpected fields {sorted(extra)}")
    if "metrics" in required:
        _validate_metrics(msg["metrics"], mtype)
    if mtype == "decide":
        config = msg["config"]
        if not isinstance(config, dict) or set(config) != set(CONFIG_KEYS):
            raise ProtocolError("schema", "decide: config needs exactly aug/opt/lrs/loss")
        if not all(isinstance(v, str) for v in config.values()):
            raise ProtocolError("schema", "decide: strategy names must be strings")
    if mtype == "result" and not isinstance(msg["terminal"], bool):
        raise ProtocolError("schema", "result: terminal must be a boolean")


def _validate_metrics(metrics, mtype: str) -> None:
    if not isinstance(metrics, dict):
        raise ProtocolError("schema", f"{mtype}: metrics must be an object")
    for key in REQUIRED_METRIC_KEYS:
        v = metrics.get(key)
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ProtocolError("schema", f"{mtype}: metrics.{key} missing or non-numeric")
    unknown = set(metrics) - set(REQUIRED_METRIC_KEYS) - set(OPTIONAL_METRIC_KEYS)
    if unknown:
        raise ProtocolError("schema", f"{mtype}: unknown metric keys {sorted(unknown)}")


def metrics_to_report(metrics: dict, terminal: bool) -> MetricsReport:
    return MetricsReport(
        map_val=float(metrics["map_val"]),
        rare_f1=float(metrics.get("rare_f1", 0.0)),
        head_f1=float(metrics.get("head_f1", 0.0)),
        mid_f1=float(metrics.get("mid_f1", 0.0)),
        tail_f1=float(metrics.get("tail_f1", 0.0)),
        loss_train=float(metrics["loss_train"]),
        loss_val=float(metrics["loss_val"]),
        grad_norm=float(metrics["grad_norm"]),
        rel_update_mag=float(metrics["rel_update_mag"]),
        texture_richness=float(metrics["texture_richness"]),
        terminal=terminal,
    )


class LineChannel:
    """Reads and writes newline-terminated UTF-8 lines with a deadline."""

    def __init__(self, rfile, wfile, closer=None):
        self._rfile = rfile
        self._wfile = wfile
        self._closer = closer
        self._buf = b""

    def send_line(self, line: str) -> None:
        self._wfile.write(line.encode("utf-8") + b"\n")
        self._wfile.flush()

    def recv_line(self, timeout: float = STEP_TIMEOUT) -> str | None:
        """One stripped line, or None on clean EOF. Raises ProtocolError on timeout."""
        while b"\n" not in self._buf:
            ready, _, _ = select.select([self._rfile], [], [], timeout)
            if not ready:
                raise ProtocolError("timeout", f"no message within {timeout:g}s")
            chunk = self._rfile.read(65536)
            if not chunk:
                return None if not self._buf else self._buf.decode("utf-8")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line.decode("utf-8")

    def close(self) -> None:
        if self._closer is not None:
            self._closer()


def stdio_channel() -> LineChannel:
    import os

    stdin_fd = sys.stdin.fileno()
    # Raw file objects so select() and read() agree on buffering.
    rfile = os.fdopen(os.dup(stdin_fd), "rb", buffering=0)
    wfile = sys.stdout.buffer
    return LineChannel(rfile, wfile)


def tcp_listen_channel(host: str, port: int, timeout: float = STEP_TIMEOUT) -> LineChannel:
    """Bind, accept exactly one connection, and wrap it."""
    server = socket.create_server((host, port))
    server.settimeout(timeout)
    conn, _ = server.accept()
    server.close()
    conn.setblocking(True)
    rfile = conn.makefile("rb", buffering=0)
    wfile = conn.makefile("wb")
    return LineChannel(rfile, wfile, closer=conn.close)


@dataclass
class _Session:
    channel: LineChannel
    timeout: float = STEP_TIMEOUT
    send_seq: int = 0
    last_recv_seq: int = -1

    def send(self, mtype: str, **fields) -> dict:
        msg = {"type": mtype, "seq": self.send_seq, **fields}
        self.channel.send_line(encode(msg))
        self.send_seq += 1
        return msg

    def recv(self, expect: tuple[str, ...]) -> dict:
        line = self.channel.recv_line(self.timeout)
        if line is None:
            raise ProtocolError("eof", "peer closed the stream")
        msg = decode(line)
        if msg["seq"] <= self.last_recv_seq:
            raise ProtocolError("seq", f"seq {msg['seq']} not increasing")
        self.last_recv_seq = msg["seq"]
        if msg["type"] == "error":
            raise ProtocolError("peer", f"{msg['code']}: {msg['detail']}")
        if msg["type"] not in expect:
            raise ProtocolError("order", f"expected {expect}, got {msg['type']!r}")
        return msg


class RemoteEnv(EnvironmentInterface):
    """Environment facade over an established bridge session.

    The remote trainer owns its own data and seeding, so reset() does not
    transmit anything: it hands back the initial metrics from the trainer's
    `observe`. One session carries exactly one episode.
    """

    def __init__(self, session: _Session, initial: MetricsReport, horizon: int, catalog: Catalog):
        self._session = session
        self._initial: MetricsReport | None = initial
        self._horizon = horizon
        self._catalog = catalog
        self._steps = 0

    @property
    def horizon(self) -> int:
        return self._horizon

    def reset(self, seed: int) -> MetricsReport:
        if self._initial is None:
            raise ProtocolError("order", "bridge sessions carry a single episode")
        initial, self._initial = self._initial, None
        return initial

    def execute(self, config: JointConfig) -> MetricsReport:
        if self._steps >= self._horizon:
            raise ProtocolError("order", "episode exhausted")
        self._session.send("decide", config=self._catalog.names_for(config))
        msg = self._session.recv(expect=("result",))
        self._steps += 1
        terminal = bool(msg["terminal"]) or self._steps >= self._horizon
        return metrics_to_report(msg["metrics"], terminal)


def serve(channel: LineChannel, catalog: Catalog, make_coordinator, horizon: int,
          timeout: float = STEP_TIMEOUT) -> dict:
    """Run one bridge session over an open channel.

    make_coordinator is called with the RemoteEnv once the handshake and the
    initial observe are in; it must return a Coordinator ready to run a single
    episode. Returns a session summary dict.
    """
    session = _Session(channel=channel, timeout=timeout)
    try:
        hello = session.recv(expect=("hello",))
        if hello["protocol_version"] != PROTOCOL_VERSION:
            raise ProtocolError("version", f"unsupported version {hello['protocol_version']!r}")
        digest = catalog.digest()
        if hello["catalog_digest"] != digest:
            raise ProtocolError("catalog_mismatch", "peer catalog digest differs")
        session.send("hello_ack", protocol_version=PROTOCOL_VERSION, catalog_digest=digest)
        observe = session.recv(expect=("observe",))
        remote = RemoteEnv(
            session=session,
            initial=metrics_to_report(observe["metrics"], terminal=False),
            horizon=horizon,
            catalog=catalog,
        )
        coordinator = make_coordinator(remote)
        result = coordinator.run_episode(env_seed=0, learn=True)
        session.send("shutdown")
        return {
            "status": "ok",
            "steps": result.steps,
            "final_map": result.final_metrics.map_val,
        }
    except ProtocolError as exc:
        try:
            session.send("error", code=exc.code, detail=exc.detail)
        except Exception:
            pass
        return {"status": "error", "code": exc.code, "detail": exc.detail}
    finally:
        channel.close()
