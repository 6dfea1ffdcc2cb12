/**
 * Synthetic multi-label dataset with a controllable long tail.
 *
 * Each class gets a random prototype direction; an example is the sum of the
 * prototypes of its active labels plus noise, so a linear model can actually
 * learn the task. Class prevalence decays exponentially with frequency rank,
 * p_r = p_head * exp(-beta * (r - 1)) with beta = rho / (nClasses - 1), the
 * same retention law the server's long-tail variants use.
 */
import { Rng } from "./rng";

export interface Dataset {
  trainX: number[][];
  trainY: number[][];
  valX: number[][];
  valY: number[][];
  classCounts: number[]; // over the training split, floor 1
  featureDim: number;
}

export const FEATURE_DIM = 16;
const HEAD_PREVALENCE = 0.45;
const PROTO_SCALE = 1.6;
const NOISE_STD = 0.6;

export function makeDataset(
  nClasses: number,
  rho: number,
  seed: number,
  trainSize = 256,
  valSize = 128,
): Dataset {
  if (nClasses < 2) throw new Error("need at least two classes");
  if (rho < 0) throw new Error("rho must be non-negative");
  const rng = new Rng(seed);

  const protos: number[][] = [];
  for (let c = 0; c < nClasses; c++) {
    protos.push(Array.from({ length: FEATURE_DIM }, () => PROTO_SCALE * rng.normal()));
  }

  const beta = rho / (nClasses - 1);
  const prevalence = Array.from({ length: nClasses }, (_, r) =>
    HEAD_PREVALENCE * Math.exp(-beta * r),
  );

  const sample = (n: number): { x: number[][]; y: number[][] } => {
    const x: number[][] = [];
    const y: number[][] = [];
    for (let i = 0; i < n; i++) {
      const labels = prevalence.map((p) => (rng.next() < p ? 1 : 0));
      if (!labels.includes(1)) labels[rng.int(nClasses)] = 1; // every example has a label
      const feat = new Array<number>(FEATURE_DIM).fill(0);
      for (let c = 0; c < nClasses; c++) {
        if (labels[c] === 1) {
          for (let d = 0; d < FEATURE_DIM; d++) feat[d] += protos[c][d];
        }
      }
      for (let d = 0; d < FEATURE_DIM; d++) feat[d] += NOISE_STD * rng.normal();
      x.push(feat);
      y.push(labels);
    }
    return { x, y };
  };

  const train = sample(trainSize);
  const val = sample(valSize);
  const classCounts = Array.from({ length: nClasses }, (_, c) =>
    Math.max(1, train.y.reduce((acc, row) => acc + row[c], 0)),
  );
  return {
    trainX: train.x,
    trainY: train.y,
    valX: val.x,
    valY: val.y,
    classCounts,
    featureDim: FEATURE_DIM,
  };
}
