/** Line-delimited transport over any pair of Node streams. */
import * as net from "net";
import { Readable, Writable } from "stream";
import { ProtocolError } from "./protocol";

export const STEP_TIMEOUT_MS = 300_000;

export class LineChannel {
  private readonly writable: Writable;
  private buf = Buffer.alloc(0);
  private lines: string[] = [];
  private eof = false;
  private pending: { resolve: (line: string | null) => void; reject: (err: Error) => void } | null =
    null;
  private pendingTimer: NodeJS.Timeout | null = null;
  private readonly closer: (() => void) | null;

  constructor(readable: Readable, writable: Writable, closer: (() => void) | null = null) {
    this.writable = writable;
    this.closer = closer;
    readable.on("data", (chunk: Buffer) => {
      this.buf = Buffer.concat([this.buf, chunk]);
      let nl: number;
      while ((nl = this.buf.indexOf(0x0a)) >= 0) {
        this.lines.push(this.buf.subarray(0, nl).toString("utf-8"));
        this.buf = this.buf.subarray(nl + 1);
      }
      this.wake();
    });
    readable.on("end", () => {
      if (this.buf.length > 0) {
        // partial trailing line still counts, matching the peer's reader
        this.lines.push(this.buf.toString("utf-8"));
        this.buf = Buffer.alloc(0);
      }
      this.eof = true;
      this.wake();
    });
    readable.on("error", () => {
      this.eof = true;
      this.wake();
    });
  }

  private wake(): void {
    if (this.pending === null) return;
    if (this.lines.length > 0) {
      const { resolve } = this.takePending();
      resolve(this.lines.shift()!);
    } else if (this.eof) {
      const { resolve } = this.takePending();
      resolve(null);
    }
  }

  private takePending() {
    const p = this.pending!;
    this.pending = null;
    if (this.pendingTimer !== null) {
      clearTimeout(this.pendingTimer);
      this.pendingTimer = null;
    }
    return p;
  }

  sendLine(line: string): void {
    this.writable.write(line + "\n");
  }

  /** Next line without its newline, or null on clean EOF. */
  recvLine(timeoutMs: number = STEP_TIMEOUT_MS): Promise<string | null> {
    if (this.lines.length > 0) return Promise.resolve(this.lines.shift()!);
    if (this.eof) return Promise.resolve(null);
    if (this.pending !== null) return Promise.reject(new Error("concurrent recvLine"));
    return new Promise((resolve, reject) => {
      this.pending = { resolve, reject };
      this.pendingTimer = setTimeout(() => {
        if (this.pending === null) return;
        const { reject: rej } = this.takePending();
        rej(new ProtocolError("timeout", `no message within ${timeoutMs / 1000}s`));
      }, timeoutMs);
      this.wake(); // data may have landed between the checks above
    });
  }

  close(): void {
    if (this.pendingTimer !== null) clearTimeout(this.pendingTimer);
    if (this.closer !== null) this.closer();
  }
}

export function stdioChannel(): LineChannel {
  return new LineChannel(process.stdin, process.stdout, () => process.stdin.destroy());
}

export function connectChannel(host: string, port: number, timeoutMs: number = STEP_TIMEOUT_MS): Promise<LineChannel> {
  return new Promise((resolve, reject) => {
    const socket = net.connect({ host, port });
    const timer = setTimeout(() => {
      socket.destroy();
      reject(new ProtocolError("timeout", `connect to ${host}:${port} timed out`));
    }, timeoutMs);
    socket.once("connect", () => {
      clearTimeout(timer);
      resolve(new LineChannel(socket, socket, () => socket.end()));
    });
    socket.once("error", (err) => {
      clearTimeout(timer);
      reject(err);
    });
  });
}
