/**
 * A deliberately small stand-in trainer: one linear layer with a sigmoid per
 * class, trained on the synthetic long-tail dataset. It exists to exercise
 * the wire protocol end to end, not to chase benchmark numbers.
 *
 * Supported strategy subset and the fallbacks for everything else:
 *
 *   aug   -> input-noise level per name (no image pipeline here)
 *   opt   SGD | Adam-style (Adam, AdamW, RAdam share one implementation);
 *         LARS falls back to SGD
 *   lrs   Step, Cosine, OneCycle; MultiStep and Linear fall back to Step,
 *         WarmUp falls back to OneCycle
 *   loss  BCE, Focal, CB; ASL falls back to Focal, MSE falls back to BCE
 *
 * Each fallback is reported once per trainer on stderr so a session log shows
 * exactly where the reduced trainer diverged from the requested configuration.
 */
import { Dataset } from "./data";
import { Bce, Focal, ClassBalanced, Loss } from "./losses";
import { SCHEDULES } from "./schedules";
import { meanAveragePrecision, strataF1, f1AtThreshold } from "./metrics";
import { Rng } from "./rng";

export interface JointConfigNames {
  aug: string;
  opt: string;
  lrs: string;
  loss: string;
}

export interface StepMetrics {
  map_val: number;
  rare_f1: number;
  head_f1: number;
  mid_f1: number;
  tail_f1: number;
  loss_train: number;
  loss_val: number;
  grad_norm: number;
  rel_update_mag: number;
  texture_richness: number;
}

const AUG_NOISE: Record<string, number> = {
  Basic: 0.02,
  CutMix: 0.1,
  MixUp: 0.08,
  RandAugment: 0.12,
  FastAA: 0.09,
};

// requested name -> implemented name, for strategies the toy trainer lacks
const OPT_FALLBACK: Record<string, string> = { LARS: "SGD" };
const LRS_FALLBACK: Record<string, string> = { MultiStep: "Step", Linear: "Step", WarmUp: "OneCycle" };
const LOSS_FALLBACK: Record<string, string> = { ASL: "Focal", MSE: "BCE" };

const BATCH = 32;
const SGD_LR = 0.05;
const ADAM_LR = 0.01;
const ADAM_B1 = 0.9;
const ADAM_B2 = 0.999;
const ADAM_EPS = 1e-8;

function zeros(rows: number, cols: number): number[][] {
  return Array.from({ length: rows }, () => new Array<number>(cols).fill(0));
}

function sigmoid(z: number): number {
  return z >= 0 ? 1 / (1 + Math.exp(-z)) : Math.exp(z) / (1 + Math.exp(z));
}

function clamp01(x: number): number {
  return Math.min(1, Math.max(0, x));
}

function frob(m: number[][]): number {
  let s = 0;
  for (const row of m) for (const v of row) s += v * v;
  return Math.sqrt(s);
}

export class ToyTrainer {
  private readonly data: Dataset;
  private readonly nClasses: number;
  private readonly rng: Rng;
  private readonly totalEpochs: number;
  private readonly warned = new Set<string>();
  private readonly warn: (msg: string) => void;

  private w: number[][];
  private b: number[];
  private epochIndex = 0;

  // Adam moments, lazily reset when the optimizer family changes
  private mW: number[][];
  private vW: number[][];
  private mB: number[];
  private vB: number[];
  private adamT = 0;

  constructor(
    data: Dataset,
    seed: number,
    totalEpochs = 25,
    warn: (msg: string) => void = (msg) => process.stderr.write(msg + "\n"),
  ) {
    this.data = data;
    this.nClasses = data.classCounts.length;
    this.rng = new Rng(seed ^ 0x5f3759df);
    this.totalEpochs = totalEpochs;
    this.warn = warn;
    this.w = Array.from({ length: this.nClasses }, () =>
      Array.from({ length: data.featureDim }, () => 0.01 * this.rng.normal()),
    );
    this.b = new Array<number>(this.nClasses).fill(0);
    this.mW = zeros(this.nClasses, data.featureDim);
    this.vW = zeros(this.nClasses, data.featureDim);
    this.mB = new Array<number>(this.nClasses).fill(0);
    this.vB = new Array<number>(this.nClasses).fill(0);
  }

  private resolve(kind: string, requested: string, table: Record<string, string>): string {
    const mapped = table[requested];
    if (mapped === undefined) return requested;
    const key = `${kind}:${requested}`;
    if (!this.warned.has(key)) {
      this.warned.add(key);
      this.warn(`adapter: ${kind} "${requested}" not implemented, using "${mapped}"`);
    }
    return mapped;
  }

  private lossFor(name: string): Loss {
    switch (name) {
      case "BCE":
        return new Bce();
      case "Focal":
        return new Focal();
      case "CB":
        return new ClassBalanced(this.data.classCounts);
      default:
        throw new Error(`unknown loss ${name}`);
    }
  }

  private forward(x: number[][]): number[][] {
    const probs = zeros(x.length, this.nClasses);
    for (let i = 0; i < x.length; i++) {
      for (let c = 0; c < this.nClasses; c++) {
        let z = this.b[c];
        const row = this.w[c];
        for (let d = 0; d < x[i].length; d++) z += row[d] * x[i][d];
        probs[i][c] = sigmoid(z);
      }
    }
    return probs;
  }

  /** Metrics of the untrained model, for the initial observation. */
  initialMetrics(): StepMetrics {
    const loss = new Bce();
    const trainProbs = this.forward(this.data.trainX);
    const valProbs = this.forward(this.data.valX);
    const s = strataF1(valProbs, this.data.valY, this.data.classCounts, 0.5);
    const rarest = this.nClasses - 1;
    return {
      map_val: clamp01(meanAveragePrecision(valProbs, this.data.valY)),
      rare_f1: clamp01(
        f1AtThreshold(valProbs.map((r) => r[rarest]), this.data.valY.map((r) => r[rarest]), 0.5),
      ),
      head_f1: clamp01(s.head),
      mid_f1: clamp01(s.mid),
      tail_f1: clamp01(s.tail),
      loss_train: Math.max(0, loss.compute(trainProbs, this.data.trainY)),
      loss_val: Math.max(0, loss.compute(valProbs, this.data.valY)),
      grad_norm: 0,
      rel_update_mag: 0,
      texture_richness: clamp01(0.15 + 4.5 * AUG_NOISE["Basic"]),
    };
  }

  /** Run one epoch under the requested configuration and report metrics. */
  epoch(config: JointConfigNames): StepMetrics {
    const noise = AUG_NOISE[config.aug];
    if (noise === undefined) throw new Error(`unknown augmentation ${config.aug}`);
    const optName = this.resolve("optimizer", config.opt, OPT_FALLBACK);
    const lrsName = this.resolve("schedule", config.lrs, LRS_FALLBACK);
    const lossName = this.resolve("loss", config.loss, LOSS_FALLBACK);

    const schedule = SCHEDULES[lrsName];
    if (schedule === undefined) throw new Error(`unknown schedule ${lrsName}`);
    const loss = this.lossFor(lossName);
    const adamStyle = optName === "Adam" || optName === "AdamW" || optName === "RAdam";
    const lrMult = schedule(Math.min(this.epochIndex, this.totalEpochs - 1), this.totalEpochs);
    const lr = (adamStyle ? ADAM_LR : SGD_LR) * lrMult;

    const wBefore = this.w.map((row) => row.slice());
    const order = Array.from({ length: this.data.trainX.length }, (_, i) => i);
    for (let i = order.length - 1; i > 0; i--) {
      const j = this.rng.int(i + 1);
      [order[i], order[j]] = [order[j], order[i]];
    }

    let lossSum = 0;
    let gradNormSum = 0;
    let batches = 0;
    for (let start = 0; start < order.length; start += BATCH) {
      const idx = order.slice(start, start + BATCH);
      const x = idx.map((i) =>
        this.data.trainX[i].map((v) => v + noise * this.rng.normal()),
      );
      const y = idx.map((i) => this.data.trainY[i]);
      const probs = this.forward(x);
      lossSum += loss.compute(probs, y);
      const g = loss.gradLogits(probs, y);

      const gW = zeros(this.nClasses, this.data.featureDim);
      const gB = new Array<number>(this.nClasses).fill(0);
      for (let i = 0; i < x.length; i++) {
        for (let c = 0; c < this.nClasses; c++) {
          const gc = g[i][c];
          gB[c] += gc;
          for (let d = 0; d < x[i].length; d++) gW[c][d] += gc * x[i][d];
        }
      }
      gradNormSum += Math.sqrt(frob(gW) ** 2 + gB.reduce((a, v) => a + v * v, 0));

      if (adamStyle) {
        this.adamT += 1;
        const c1 = 1 - Math.pow(ADAM_B1, this.adamT);
        const c2 = 1 - Math.pow(ADAM_B2, this.adamT);
        for (let c = 0; c < this.nClasses; c++) {
          for (let d = 0; d < this.data.featureDim; d++) {
            this.mW[c][d] = ADAM_B1 * this.mW[c][d] + (1 - ADAM_B1) * gW[c][d];
            this.vW[c][d] = ADAM_B2 * this.vW[c][d] + (1 - ADAM_B2) * gW[c][d] ** 2;
            this.w[c][d] -= (lr * (this.mW[c][d] / c1)) / (Math.sqrt(this.vW[c][d] / c2) + ADAM_EPS);
          }
          this.mB[c] = ADAM_B1 * this.mB[c] + (1 - ADAM_B1) * gB[c];
          this.vB[c] = ADAM_B2 * this.vB[c] + (1 - ADAM_B2) * gB[c] ** 2;
          this.b[c] -= (lr * (this.mB[c] / c1)) / (Math.sqrt(this.vB[c] / c2) + ADAM_EPS);
        }
      } else {
        for (let c = 0; c < this.nClasses; c++) {
          for (let d = 0; d < this.data.featureDim; d++) this.w[c][d] -= lr * gW[c][d];
          this.b[c] -= lr * gB[c];
        }
      }
      batches += 1;
    }
    this.epochIndex += 1;

    const valProbs = this.forward(this.data.valX);
    const s = strataF1(valProbs, this.data.valY, this.data.classCounts, 0.5);
    const rarest = this.nClasses - 1;
    const rareScores = valProbs.map((r) => r[rarest]);
    const rareLabels = this.data.valY.map((r) => r[rarest]);

    let deltaSq = 0;
    for (let c = 0; c < this.nClasses; c++) {
      for (let d = 0; d < this.data.featureDim; d++) deltaSq += (this.w[c][d] - wBefore[c][d]) ** 2;
    }
    const relUpdate = Math.sqrt(deltaSq) / (frob(wBefore) + 1e-12);

    const metrics: StepMetrics = {
      map_val: clamp01(meanAveragePrecision(valProbs, this.data.valY)),
      rare_f1: clamp01(f1AtThreshold(rareScores, rareLabels, 0.5)),
      head_f1: clamp01(s.head),
      mid_f1: clamp01(s.mid),
      tail_f1: clamp01(s.tail),
      loss_train: Math.max(0, lossSum / batches),
      loss_val: Math.max(0, loss.compute(valProbs, this.data.valY)),
      grad_norm: Math.max(0, gradNormSum / batches),
      rel_update_mag: Math.max(0, relUpdate),
      texture_richness: clamp01(0.15 + 4.5 * noise),
    };
    for (const [k, v] of Object.entries(metrics)) {
      if (!Number.isFinite(v)) throw new Error(`non-finite metric ${k}`);
    }
    return metrics;
  }
}
