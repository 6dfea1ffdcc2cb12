/**
 * Message layer of the trainer bridge: newline-delimited JSON, one message
 * per line, canonical encoding (sorted keys, no whitespace) so transcripts
 * are byte-stable.
 *
 *   hello     {type, seq, protocol_version, catalog_digest}
 *   hello_ack {type, seq, protocol_version, catalog_digest}
 *   observe   {type, seq, metrics}
 *   decide    {type, seq, config{aug, opt, lrs, loss}}
 *   result    {type, seq, metrics, terminal}
 *   shutdown  {type, seq}
 *   error     {type, seq, code, detail}
 *
 * Validation is strict in both directions: unknown message types, missing or
 * extra fields, unknown metric keys, and non-monotonic sequence numbers are
 * all protocol errors, never warnings.
 */

export const PROTOCOL_VERSION = "1";

// Digest of the strategy catalog this adapter was written against. The
// controller refuses the handshake if its own catalog hashes differently.
export const CATALOG_DIGEST =
  "061ccc4c2f4a443aba371e6a0c6a1639e98d681d0ae52b9c79e89d63ce2d93ef";

export const REQUIRED_METRIC_KEYS = [
  "map_val",
  "loss_train",
  "loss_val",
  "grad_norm",
  "rel_update_mag",
  "texture_richness",
] as const;
export const OPTIONAL_METRIC_KEYS = ["rare_f1", "head_f1", "mid_f1", "tail_f1"] as const;
export const CONFIG_KEYS = ["aug", "opt", "lrs", "loss"] as const;

const FIELDS_BY_TYPE: Record<string, readonly string[]> = {
  hello: ["protocol_version", "catalog_digest"],
  hello_ack: ["protocol_version", "catalog_digest"],
  observe: ["metrics"],
  decide: ["config"],
  result: ["metrics", "terminal"],
  shutdown: [],
  error: ["code", "detail"],
};

export interface BridgeMessage {
  type: string;
  seq: number;
  [field: string]: unknown;
}

export class ProtocolError extends Error {
  readonly code: string;
  readonly detail: string;

  constructor(code: string, detail: string) {
    super(`${code}: ${detail}`);
    this.name = "ProtocolError";
    this.code = code;
    this.detail = detail;
  }
}

function isPlainObject(v: unknown): v is Record<string, unknown> {
  return typeof v === "object" && v !== null && !Array.isArray(v);
}

/** JSON with object keys sorted at every depth and no whitespace. */
export function canonical(value: unknown): string {
  if (Array.isArray(value)) {
    return "[" + value.map(canonical).join(",") + "]";
  }
  if (isPlainObject(value)) {
    const parts = Object.keys(value)
      .sort()
      .map((k) => JSON.stringify(k) + ":" + canonical(value[k]));
    return "{" + parts.join(",") + "}";
  }
  if (typeof value === "number" && !Number.isFinite(value)) {
    throw new ProtocolError("encode", "non-finite number in message");
  }
  return JSON.stringify(value);
}

export function encode(msg: BridgeMessage): string {
  validateMessage(msg);
  return canonical(msg);
}

export function decode(line: string): BridgeMessage {
  let msg: unknown;
  try {
    msg = JSON.parse(line);
  } catch (exc) {
    throw new ProtocolError("parse", `not valid JSON: ${(exc as Error).message}`);
  }
  if (!isPlainObject(msg)) {
    throw new ProtocolError("parse", "message must be a JSON object");
  }
  validateMessage(msg);
  return msg as BridgeMessage;
}

export function validateMessage(msg: Record<string, unknown>): void {
  const mtype = msg["type"];
  if (typeof mtype !== "string" || !(mtype in FIELDS_BY_TYPE)) {
    throw new ProtocolError("schema", `unknown message type ${JSON.stringify(mtype)}`);
  }
  const seq = msg["seq"];
  if (typeof seq !== "number" || !Number.isInteger(seq) || seq < 0) {
    throw new ProtocolError("schema", `${mtype}: missing or invalid seq`);
  }
  const required = FIELDS_BY_TYPE[mtype];
  for (const name of required) {
    if (!(name in msg)) {
      throw new ProtocolError("schema", `${mtype}: missing field "${name}"`);
    }
  }
  const allowed = new Set<string>(["type", "seq", ...required]);
  const extra = Object.keys(msg).filter((k) => !allowed.has(k));
  if (extra.length > 0) {
    throw new ProtocolError("schema", `${mtype}: unexpected fields ${JSON.stringify(extra.sort())}`);
  }
  if (required.includes("metrics")) {
    validateMetrics(msg["metrics"], mtype);
  }
  if (mtype === "decide") {
    const config = msg["config"];
    if (!isPlainObject(config) || !sameKeySet(Object.keys(config), CONFIG_KEYS)) {
      throw new ProtocolError("schema", "decide: config needs exactly aug/opt/lrs/loss");
    }
    if (!Object.values(config).every((v) => typeof v === "string")) {
      throw new ProtocolError("schema", "decide: strategy names must be strings");
    }
  }
  if (mtype === "result" && typeof msg["terminal"] !== "boolean") {
    throw new ProtocolError("schema", "result: terminal must be a boolean");
  }
}

function sameKeySet(keys: string[], expected: readonly string[]): boolean {
  return keys.length === expected.length && expected.every((k) => keys.includes(k));
}

function validateMetrics(metrics: unknown, mtype: string): void {
  if (!isPlainObject(metrics)) {
    throw new ProtocolError("schema", `${mtype}: metrics must be an object`);
  }
  for (const key of REQUIRED_METRIC_KEYS) {
    if (typeof metrics[key] !== "number") {
      throw new ProtocolError("schema", `${mtype}: metrics.${key} missing or non-numeric`);
    }
  }
  const known = new Set<string>([...REQUIRED_METRIC_KEYS, ...OPTIONAL_METRIC_KEYS]);
  const unknown = Object.keys(metrics).filter((k) => !known.has(k));
  if (unknown.length > 0) {
    throw new ProtocolError("schema", `${mtype}: unknown metric keys ${JSON.stringify(unknown.sort())}`);
  }
}
