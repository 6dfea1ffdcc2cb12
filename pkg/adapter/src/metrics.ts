/**
 * Ranking metrics matching the bridge server's reference implementation.
 *
 * averagePrecision is the cross-language contract: on integer-score fixtures
 * it must agree with the server bit for bit, so it performs the same plain
 * rank-order accumulation (stable descending sort, running hits/rank sum) in
 * the same operation order. No shortcuts, no reassociation.
 */

export function averagePrecision(scores: number[], labels: number[]): number {
  if (scores.length !== labels.length) {
    throw new Error("scores and labels must have equal length");
  }
  if (!labels.some((y) => y !== 0)) {
    throw new Error("average precision undefined without positives");
  }
  // Stable argsort by descending score; Array.sort is guaranteed stable, so
  // ties keep input order exactly like the reference.
  const order = scores.map((_, i) => i).sort((a, b) => scores[b] - scores[a]);
  let hits = 0;
  let total = 0.0;
  for (let r = 0; r < order.length; r++) {
    if (labels[order[r]] !== 0) {
      hits += 1;
      total += hits / (r + 1);
    }
  }
  return total / hits;
}

/** Mean AP over class columns; classes without positives are skipped. */
export function meanAveragePrecision(scores: number[][], labels: number[][]): number {
  const nClasses = scores[0].length;
  const aps: number[] = [];
  for (let c = 0; c < nClasses; c++) {
    const col = scores.map((row) => row[c]);
    const lab = labels.map((row) => row[c]);
    if (lab.some((y) => y !== 0)) {
      aps.push(averagePrecision(col, lab));
    }
  }
  if (aps.length === 0) throw new Error("no class had positives; mAP undefined");
  return aps.reduce((a, b) => a + b, 0) / aps.length;
}

export function f1AtThreshold(scores: number[], labels: number[], threshold = 0.5): number {
  let tp = 0;
  let fp = 0;
  let fn = 0;
  for (let i = 0; i < scores.length; i++) {
    const pred = scores[i] >= threshold;
    const pos = labels[i] !== 0;
    if (pred && pos) tp++;
    else if (pred && !pos) fp++;
    else if (!pred && pos) fn++;
  }
  const denom = 2 * tp + fp + fn;
  return denom ? (2.0 * tp) / denom : 0.0;
}

// Python's round() is half-to-even; the stratum size must match it.
function roundHalfEven(x: number): number {
  const floor = Math.floor(x);
  const frac = x - floor;
  if (frac > 0.5) return floor + 1;
  if (frac < 0.5) return floor;
  return floor % 2 === 0 ? floor : floor + 1;
}

/** Class index split (head, mid, tail) by frequency: top 25%, middle, bottom 25%. */
export function strataIndices(classFreqs: number[]): [number[], number[], number[]] {
  const n = classFreqs.length;
  if (n < 2) throw new Error("need at least two classes to stratify");
  const k = Math.max(1, roundHalfEven(0.25 * n));
  const order = classFreqs.map((_, i) => i).sort((a, b) => classFreqs[b] - classFreqs[a]);
  return [order.slice(0, k), order.slice(k, n - k), order.slice(n - k)];
}

export function strataF1(
  scores: number[][],
  labels: number[][],
  classFreqs: number[],
  threshold = 0.5,
): { head: number; mid: number; tail: number } {
  const strata = strataIndices(classFreqs);
  const mean = (idx: number[]): number => {
    if (idx.length === 0) return 0.0;
    let sum = 0.0;
    for (const c of idx) {
      sum += f1AtThreshold(
        scores.map((row) => row[c]),
        labels.map((row) => row[c]),
        threshold,
      );
    }
    return sum / idx.length;
  };
  return { head: mean(strata[0]), mid: mean(strata[1]), tail: mean(strata[2]) };
}
