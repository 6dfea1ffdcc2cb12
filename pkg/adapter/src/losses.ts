/**
 * Multi-label loss functions over per-class probabilities.
 *
 * Each loss exposes the batch-mean value and the gradient with respect to the
 * pre-sigmoid logits, which is what the trainer backpropagates through its
 * linear layer. Probabilities are clamped away from 0/1 before any log.
 */

const EPS = 1e-7;

function clamp01(p: number): number {
  return Math.min(1 - EPS, Math.max(EPS, p));
}

export interface Loss {
  readonly name: string;
  /** Mean loss over every (sample, class) cell. */
  compute(probs: number[][], targets: number[][]): number;
  /** dLoss/dLogit, same shape as probs. */
  gradLogits(probs: number[][], targets: number[][]): number[][];
}

/** Plain binary cross-entropy, the baseline everything else reduces to. */
export class Bce implements Loss {
  readonly name: string = "BCE";

  compute(probs: number[][], targets: number[][]): number {
    let sum = 0;
    let cells = 0;
    for (let i = 0; i < probs.length; i++) {
      for (let j = 0; j < probs[i].length; j++) {
        const p = clamp01(probs[i][j]);
        const y = targets[i][j];
        sum += -(y * Math.log(p) + (1 - y) * Math.log(1 - p));
        cells++;
      }
    }
    return sum / cells;
  }

  gradLogits(probs: number[][], targets: number[][]): number[][] {
    const cells = probs.length * probs[0].length;
    // d/dz of mean BCE through a sigmoid is the usual (p - y) / N
    return probs.map((row, i) => row.map((p, j) => (p - targets[i][j]) / cells));
  }
}

/**
 * Focal loss: BCE terms scaled by (1 - p_t)^gamma so easy cells fade out.
 * gamma = 0 recovers BCE exactly, which the tests use as a cross-check.
 */
export class Focal implements Loss {
  readonly name: string = "Focal";

  constructor(readonly gamma: number = 2.0) {
    if (gamma < 0) throw new Error("gamma must be non-negative");
  }

  compute(probs: number[][], targets: number[][]): number {
    let sum = 0;
    let cells = 0;
    for (let i = 0; i < probs.length; i++) {
      for (let j = 0; j < probs[i].length; j++) {
        const p = clamp01(probs[i][j]);
        const y = targets[i][j];
        const pt = y === 1 ? p : 1 - p;
        sum += -Math.pow(1 - pt, this.gamma) * Math.log(pt);
        cells++;
      }
    }
    return sum / cells;
  }

  gradLogits(probs: number[][], targets: number[][]): number[][] {
    const cells = probs.length * probs[0].length;
    const g = this.gamma;
    return probs.map((row, i) =>
      row.map((pRaw, j) => {
        const p = clamp01(pRaw);
        const y = targets[i][j];
        const pt = y === 1 ? p : 1 - p;
        // d/dpt of -(1-pt)^g log(pt), then dpt/dz = +-p(1-p)
        const dpt = g * Math.pow(1 - pt, g - 1) * Math.log(pt) - Math.pow(1 - pt, g) / pt;
        const sign = y === 1 ? 1 : -1;
        return (dpt * sign * p * (1 - p)) / cells;
      }),
    );
  }
}

/**
 * Class-balanced BCE: per-class weights from the effective number of samples,
 * w_c = (1 - beta) / (1 - beta^n_c), normalized to mean 1 so the loss scale
 * stays comparable with plain BCE.
 */
export class ClassBalanced implements Loss {
  readonly name: string = "CB";
  private readonly weights: number[];

  constructor(classCounts: number[], beta = 0.999) {
    if (classCounts.some((n) => n < 1)) throw new Error("class counts must be >= 1");
    const raw = classCounts.map((n) => (1 - beta) / (1 - Math.pow(beta, n)));
    const mean = raw.reduce((a, b) => a + b, 0) / raw.length;
    this.weights = raw.map((w) => w / mean);
  }

  compute(probs: number[][], targets: number[][]): number {
    let sum = 0;
    let cells = 0;
    for (let i = 0; i < probs.length; i++) {
      for (let j = 0; j < probs[i].length; j++) {
        const p = clamp01(probs[i][j]);
        const y = targets[i][j];
        sum += -this.weights[j] * (y * Math.log(p) + (1 - y) * Math.log(1 - p));
        cells++;
      }
    }
    return sum / cells;
  }

  gradLogits(probs: number[][], targets: number[][]): number[][] {
    const cells = probs.length * probs[0].length;
    return probs.map((row, i) =>
      row.map((p, j) => (this.weights[j] * (p - targets[i][j])) / cells),
    );
  }
}
