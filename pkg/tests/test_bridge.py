import json
import socket
import threading

import numpy as np
import pytest

from trainctl.bridge import (
    PROTOCOL_VERSION,
    LineChannel,
    ProtocolError,
    decode,
    encode,
    metrics_to_report,
    serve,
)
from trainctl.catalog import build_default_catalog
from trainctl.coordinator import Coordinator, RunConfig
from trainctl.env.surrogate import SurrogateEnv, default_spec
from trainctl.qlearn import AgentConfig

CAT = build_default_catalog()

GOOD_METRICS = {
    "map_val": 0.1,
    "loss_train": 0.9,
    "loss_val": 1.0,
    "grad_norm": 0.8,
    "rel_update_mag": 0.01,
    "texture_richness": 0.5,
}


def sample_messages():
    return [
        {"type": "hello", "seq": 0, "protocol_version": "1", "catalog_digest": CAT.digest()},
        {"type": "hello_ack", "seq": 0, "protocol_version": "1", "catalog_digest": CAT.digest()},
        {"type": "observe", "seq": 1, "metrics": dict(GOOD_METRICS)},
        {
            "type": "observe",
            "seq": 2,
            "metrics": dict(GOOD_METRICS, rare_f1=0.2, head_f1=0.5, mid_f1=0.4, tail_f1=0.2),
        },
        {
            "type": "decide",
            "seq": 1,
            "config": {"aug": "Basic", "opt": "SGD", "lrs": "Step", "loss": "BCE"},
        },
        {"type": "result", "seq": 3, "metrics": dict(GOOD_METRICS), "terminal": False},
        {"type": "result", "seq": 4, "metrics": dict(GOOD_METRICS), "terminal": True},
        {"type": "shutdown", "seq": 2},
        {"type": "error", "seq": 5, "code": "catalog_mismatch", "detail": "digest differs"},
    ]


def test_round_trip_every_message_type():
    for msg in sample_messages():
        line = encode(msg)
        assert "\n" not in line
        assert decode(line) == msg


def test_encoding_is_canonical():
    msg = {"type": "shutdown", "seq": 7}
    line = encode(msg)
    assert line == '{"seq":7,"type":"shutdown"}'  # sorted keys, no spaces
    reordered = encode({"seq": 7, "type": "shutdown"})
    assert reordered == line


def test_seq_validation():
    for bad in ({"type": "shutdown"}, {"type": "shutdown", "seq": -1},
                {"type": "shutdown", "seq": True}, {"type": "shutdown", "seq": 1.5}):
        with pytest.raises(ProtocolError) as err:
            encode(bad)
        assert err.value.code == "schema"


def test_schema_rejections():
    cases = [
        {"type": "mystery", "seq": 0},
        {"type": "hello", "seq": 0, "protocol_version": "1"},  # missing digest
        {"type": "shutdown", "seq": 0, "extra": 1},
        {"type": "observe", "seq": 0, "metrics": {"map_val": 0.1}},  # missing keys
        {"type": "observe", "seq": 0, "metrics": dict(GOOD_METRICS, map_val="high")},
        {"type": "observe", "seq": 0, "metrics": dict(GOOD_METRICS, bogus=1.0)},
        {"type": "observe", "seq": 0, "metrics": [1, 2]},
        {"type": "decide", "seq": 0, "config": {"aug": "Basic"}},
        {"type": "decide", "seq": 0, "config": {"aug": 1, "opt": "SGD", "lrs": "Step", "loss": "BCE"}},
        {"type": "result", "seq": 0, "metrics": dict(GOOD_METRICS), "terminal": 1},
    ]
    for msg in cases:
        with pytest.raises(ProtocolError) as err:
            encode(msg)
        assert err.value.code == "schema", msg


def test_parse_failures_use_parse_code():
    for line in ("not json", "{", '"just a string"', "[1,2,3]", ""):
        with pytest.raises(ProtocolError) as err:
            decode(line)
        assert err.value.code == "parse"


def test_decode_fuzz_never_raises_other_exceptions():
    rng = np.random.default_rng(0)
    fragments = ['{"type":', '"observe"', '"seq":', "1", "}", "{", "]", ",",
                 '"metrics"', "null", "true", '"hello"', '"\\u00e9"', " "]
    for _ in range(1000):
        line = "".join(rng.choice(fragments) for _ in range(int(rng.integers(1, 10))))
        try:
            decode(line)
        except ProtocolError:
            pass  # the only acceptable failure mode


def test_metrics_to_report_defaults():
    r = metrics_to_report(dict(GOOD_METRICS), terminal=False)
    assert r.rare_f1 == r.head_f1 == r.mid_f1 == r.tail_f1 == 0.0
    assert r.map_val == 0.1
    assert not r.terminal
    full = metrics_to_report(
        dict(GOOD_METRICS, rare_f1=0.2, head_f1=0.6, mid_f1=0.4, tail_f1=0.2), terminal=True
    )
    assert full.head_f1 == 0.6
    assert full.terminal


# ---------------------------------------------------------------------------
# live sessions over a socket pair


def socket_channels():
    a, b = socket.socketpair()
    chan_a = LineChannel(a.makefile("rb", buffering=0), a.makefile("wb"), closer=a.close)
    chan_b = LineChannel(b.makefile("rb", buffering=0), b.makefile("wb"), closer=b.close)
    return chan_a, chan_b


class ScriptedTrainer:
    """Protocol client backed by a local surrogate run (stands in for a real trainer)."""

    def __init__(self, channel: LineChannel, env_seed: int, digest: str | None = None,
                 version: str = PROTOCOL_VERSION):
        self.channel = channel
        self.env = SurrogateEnv(CAT, default_spec(), horizon=6)
        self.env_seed = env_seed
        self.digest = digest or CAT.digest()
        self.version = version
        self.seq = 0
        self.peer_seq = -1
        self.received: list[dict] = []
        self.error: dict | None = None

    def _send(self, mtype, **fields):
        self.channel.send_line(encode({"type": mtype, "seq": self.seq, **fields}))
        self.seq += 1

    def _recv(self):
        line = self.channel.recv_line(timeout=10.0)
        if line is None:
            return None
        msg = decode(line)
        assert msg["seq"] > self.peer_seq  # server seq strictly increases
        self.peer_seq = msg["seq"]
        self.received.append(msg)
        return msg

    def metrics_of(self, report) -> dict:
        return {
            "map_val": report.map_val,
            "rare_f1": report.rare_f1,
            "head_f1": report.head_f1,
            "mid_f1": report.mid_f1,
            "tail_f1": report.tail_f1,
            "loss_train": report.loss_train,
            "loss_val": report.loss_val,
            "grad_norm": report.grad_norm,
            "rel_update_mag": report.rel_update_mag,
            "texture_richness": report.texture_richness,
        }

    def run(self):
        try:
            self._send("hello", protocol_version=self.version, catalog_digest=self.digest)
            msg = self._recv()
            if msg is None or msg["type"] == "error":
                self.error = msg
                return
            assert msg["type"] == "hello_ack"
            initial = self.env.reset(self.env_seed)
            self._send("observe", metrics=self.metrics_of(initial))
            while True:
                msg = self._recv()
                if msg is None or msg["type"] in ("shutdown", "error"):
                    if msg and msg["type"] == "error":
                        self.error = msg
                    return
                assert msg["type"] == "decide"
                report = self.env.execute(CAT.config_from_names(msg["config"]))
                self._send("result", metrics=self.metrics_of(report), terminal=report.terminal)
        finally:
            self.channel.close()


def run_config():
    return RunConfig(
        horizon=6,
        agent=AgentConfig(alpha=1e-3, gamma=0.9, sync_interval=50, minibatch=4),
        min_fill=4,
    )


def serve_session(trainer: ScriptedTrainer, server_chan, seed=21):
    cfg = run_config()
    outcome = {}

    def server():
        outcome.update(
            serve(
                server_chan,
                CAT,
                lambda env: Coordinator(CAT, env, cfg, seed=seed),
                horizon=cfg.horizon,
                timeout=10.0,
            )
        )

    thread = threading.Thread(target=server)
    thread.start()
    trainer.run()
    thread.join(timeout=20.0)
    assert not thread.is_alive()
    return outcome


def test_full_session_and_remote_matches_inprocess():
    chan_a, chan_b = socket_channels()
    trainer = ScriptedTrainer(chan_b, env_seed=42)
    outcome = serve_session(trainer, chan_a, seed=21)

    assert outcome["status"] == "ok"
    assert outcome["steps"] == 6
    assert trainer.error is None
    assert trainer.received[-1]["type"] == "shutdown"
    decides = [m for m in trainer.received if m["type"] == "decide"]
    assert len(decides) == 6

    # The controller cannot tell a remote surrogate from a local one: the
    # decision stream over the bridge must equal the in-process run with the
    # same controller seed and environment seed.
    local = Coordinator(
        CAT, SurrogateEnv(CAT, default_spec(), horizon=6), run_config(), seed=21
    ).run_episode(env_seed=42, learn=True)
    assert [CAT.names_for(rec.config) for rec in local.decisions] == [
        m["config"] for m in decides
    ]
    assert outcome["final_map"] == local.final_metrics.map_val


def test_catalog_mismatch_rejected():
    chan_a, chan_b = socket_channels()
    trainer = ScriptedTrainer(chan_b, env_seed=1, digest="0" * 64)
    outcome = serve_session(trainer, chan_a)
    assert outcome == {"status": "error", "code": "catalog_mismatch",
                       "detail": "peer catalog digest differs"}
    assert trainer.error is not None and trainer.error["code"] == "catalog_mismatch"


def test_protocol_version_mismatch_rejected():
    chan_a, chan_b = socket_channels()
    trainer = ScriptedTrainer(chan_b, env_seed=1, version="2")
    outcome = serve_session(trainer, chan_a)
    assert outcome["status"] == "error"
    assert outcome["code"] == "version"


def test_malformed_first_message_reports_parse_error():
    chan_a, chan_b = socket_channels()
    outcome = {}

    def server():
        outcome.update(
            serve(chan_a, CAT, lambda env: None, horizon=3, timeout=5.0)
        )

    thread = threading.Thread(target=server)
    thread.start()
    chan_b.send_line("this is not json")
    reply = decode(chan_b.recv_line(timeout=5.0))
    thread.join(timeout=10.0)
    assert reply["type"] == "error"
    assert reply["code"] == "parse"
    assert outcome["status"] == "error"
    chan_b.close()


def test_stale_seq_detected():
    chan_a, chan_b = socket_channels()
    outcome = {}

    def server():
        outcome.update(serve(chan_a, CAT, lambda env: None, horizon=3, timeout=5.0))

    thread = threading.Thread(target=server)
    thread.start()
    hello = {"type": "hello", "seq": 0, "protocol_version": PROTOCOL_VERSION,
             "catalog_digest": CAT.digest()}
    chan_b.send_line(encode(hello))
    ack = decode(chan_b.recv_line(timeout=5.0))
    assert ack["type"] == "hello_ack"
    # Reuse seq 0: the server must flag the regression.
    chan_b.send_line(encode({"type": "observe", "seq": 0, "metrics": dict(GOOD_METRICS)}))
    reply = decode(chan_b.recv_line(timeout=5.0))
    thread.join(timeout=10.0)
    assert reply["type"] == "error"
    assert reply["code"] == "seq"
    assert outcome["status"] == "error"
    chan_b.close()


def test_recv_timeout_raises():
    chan_a, chan_b = socket_channels()
    with pytest.raises(ProtocolError) as err:
        chan_a.recv_line(timeout=0.05)
    assert err.value.code == "timeout"
    chan_a.close()
    chan_b.close()


def test_split_lines_reassembled():
    chan_a, chan_b = socket_channels()
    msg = encode({"type": "shutdown", "seq": 0})
    # Deliver the line in two fragments; the reader must buffer across reads.
    chan_b._wfile.write(msg[:5].encode())
    chan_b._wfile.flush()
    chan_b._wfile.write((msg[5:] + "\n" + encode({"type": "shutdown", "seq": 1}) + "\n").encode())
    chan_b._wfile.flush()
    assert chan_a.recv_line(timeout=5.0) == msg
    assert json.loads(chan_a.recv_line(timeout=5.0))["seq"] == 1
    chan_a.close()
    chan_b.close()
