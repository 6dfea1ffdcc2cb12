#!/usr/bin/env node
/**
 * Entry point. Connects the toy trainer to a controller, either over this
 * process's stdio (the controller spawned us, or pipes were wired by hand)
 * or over TCP to a controller started with --listen.
 *
 *   adapter --stdio [--classes N] [--rho R] [--seed S]
 *   adapter --connect HOST:PORT [--classes N] [--rho R] [--seed S]
 */
import { connectChannel, stdioChannel, LineChannel, STEP_TIMEOUT_MS } from "./channel";
import { makeDataset } from "./data";
import { ProtocolError } from "./protocol";
import { runSession } from "./session";
import { ToyTrainer } from "./trainer";

interface CliArgs {
  stdio: boolean;
  connect: { host: string; port: number } | null;
  classes: number;
  rho: number;
  seed: number;
  timeoutMs: number;
}

const USAGE =
  "usage: adapter (--stdio | --connect HOST:PORT) [--classes N] [--rho R] [--seed S] [--timeout SECONDS]";

function parseArgs(argv: string[]): CliArgs {
  const args: CliArgs = {
    stdio: false,
    connect: null,
    classes: 10,
    rho: 2.0,
    seed: 0,
    timeoutMs: STEP_TIMEOUT_MS,
  };
  let i = 0;
  const value = (flag: string): string => {
    i += 1;
    if (i >= argv.length) throw new Error(`${flag} needs a value`);
    return argv[i];
  };
  for (; i < argv.length; i++) {
    const flag = argv[i];
    switch (flag) {
      case "--stdio":
        args.stdio = true;
        break;
      case "--connect": {
        const addr = value(flag);
        const sep = addr.lastIndexOf(":");
        if (sep <= 0) throw new Error("--connect expects HOST:PORT");
        const port = Number(addr.slice(sep + 1));
        if (!Number.isInteger(port) || port <= 0 || port > 65535) {
          throw new Error(`bad port in ${JSON.stringify(addr)}`);
        }
        args.connect = { host: addr.slice(0, sep), port };
        break;
      }
      case "--classes":
        args.classes = Number(value(flag));
        if (!Number.isInteger(args.classes) || args.classes < 2) {
          throw new Error("--classes must be an integer >= 2");
        }
        break;
      case "--rho":
        args.rho = Number(value(flag));
        if (!Number.isFinite(args.rho) || args.rho < 0) {
          throw new Error("--rho must be a non-negative number");
        }
        break;
      case "--seed":
        args.seed = Number(value(flag));
        if (!Number.isInteger(args.seed) || args.seed < 0) {
          throw new Error("--seed must be a non-negative integer");
        }
        break;
      case "--timeout":
        args.timeoutMs = Number(value(flag)) * 1000;
        if (!Number.isFinite(args.timeoutMs) || args.timeoutMs <= 0) {
          throw new Error("--timeout must be a positive number of seconds");
        }
        break;
      default:
        throw new Error(`unknown flag ${JSON.stringify(flag)}`);
    }
  }
  if (args.stdio === (args.connect !== null)) {
    throw new Error("pick exactly one of --stdio or --connect");
  }
  return args;
}

async function main(argv: string[]): Promise<number> {
  let args: CliArgs;
  try {
    args = parseArgs(argv);
  } catch (exc) {
    process.stderr.write(`adapter: ${(exc as Error).message}\n${USAGE}\n`);
    return 2;
  }

  const data = makeDataset(args.classes, args.rho, args.seed);
  const trainer = new ToyTrainer(data, args.seed);
  let channel: LineChannel;
  try {
    channel = args.connect
      ? await connectChannel(args.connect.host, args.connect.port, args.timeoutMs)
      : stdioChannel();
  } catch (exc) {
    process.stderr.write(`adapter: ${(exc as Error).message}\n`);
    return 1;
  }

  try {
    const result = await runSession(channel, trainer, args.timeoutMs);
    process.stderr.write(JSON.stringify({ status: "ok", steps: result.steps }) + "\n");
    return 0;
  } catch (exc) {
    if (exc instanceof ProtocolError) {
      process.stderr.write(
        JSON.stringify({ status: "error", code: exc.code, detail: exc.detail }) + "\n",
      );
      return 1;
    }
    process.stderr.write(`adapter: ${(exc as Error).message}\n`);
    return 1;
  } finally {
    channel.close();
  }
}

main(process.argv.slice(2)).then(
  (code) => {
    process.exitCode = code;
  },
  (exc) => {
    process.stderr.write(`adapter: ${(exc as Error).message}\n`);
    process.exitCode = 1;
  },
);
