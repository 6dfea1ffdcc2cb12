/**
 * Client half of the bridge conversation. The controller on the other end is
 * the server; we introduce ourselves, report the untrained model, then train
 * one epoch per `decide` until it says `shutdown`.
 *
 * Sequence numbers count per direction. Ours start at zero with `hello`; the
 * peer's must be strictly increasing or the session aborts.
 */
import { LineChannel, STEP_TIMEOUT_MS } from "./channel";
import {
  BridgeMessage,
  CATALOG_DIGEST,
  PROTOCOL_VERSION,
  ProtocolError,
  decode,
  encode,
} from "./protocol";
import { JointConfigNames, StepMetrics } from "./trainer";

export interface EpochRunner {
  initialMetrics(): StepMetrics;
  epoch(config: JointConfigNames): StepMetrics;
}

export interface SessionResult {
  steps: number;
  /** every line on the wire, prefixed "> " sent / "< " received, in order */
  transcript: string[];
}

export async function runSession(
  channel: LineChannel,
  trainer: EpochRunner,
  timeoutMs: number = STEP_TIMEOUT_MS,
): Promise<SessionResult> {
  let sendSeq = 0;
  let lastRecvSeq = -1;
  const transcript: string[] = [];

  const send = (mtype: string, fields: Record<string, unknown>): void => {
    const line = encode({ type: mtype, seq: sendSeq, ...fields } as BridgeMessage);
    sendSeq += 1;
    transcript.push("> " + line);
    channel.sendLine(line);
  };

  const recv = async (expect: string[]): Promise<BridgeMessage> => {
    const line = await channel.recvLine(timeoutMs);
    if (line === null) throw new ProtocolError("eof", "peer closed the stream");
    transcript.push("< " + line);
    const msg = decode(line);
    if (msg.seq <= lastRecvSeq) {
      throw new ProtocolError("seq", `seq ${msg.seq} not increasing`);
    }
    lastRecvSeq = msg.seq;
    if (msg.type === "error") {
      throw new ProtocolError("peer", `${msg["code"]}: ${msg["detail"]}`);
    }
    if (!expect.includes(msg.type)) {
      throw new ProtocolError("order", `expected ${expect.join("|")}, got "${msg.type}"`);
    }
    return msg;
  };

  send("hello", { protocol_version: PROTOCOL_VERSION, catalog_digest: CATALOG_DIGEST });
  const ack = await recv(["hello_ack"]);
  if (ack["protocol_version"] !== PROTOCOL_VERSION) {
    throw new ProtocolError("version", `unsupported version ${JSON.stringify(ack["protocol_version"])}`);
  }
  if (ack["catalog_digest"] !== CATALOG_DIGEST) {
    throw new ProtocolError("catalog_mismatch", "peer catalog digest differs");
  }

  send("observe", { metrics: trainer.initialMetrics() as unknown as Record<string, number> });

  let steps = 0;
  for (;;) {
    const msg = await recv(["decide", "shutdown"]);
    if (msg.type === "shutdown") break;
    const metrics = trainer.epoch(msg["config"] as JointConfigNames);
    steps += 1;
    send("result", { metrics: metrics as unknown as Record<string, number>, terminal: false });
  }
  return { steps, transcript };
}
