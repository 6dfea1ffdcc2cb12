/** Learning-rate multiplier for a given epoch of the session. */
export type Schedule = (epoch: number, total: number) => number;

// Step: thirds of the run at 1x, 0.5x, 0.25x.
export const step: Schedule = (epoch, total) => {
  const third = Math.max(1, Math.ceil(total / 3));
  return Math.pow(0.5, Math.floor(epoch / third));
};

// Half-cosine from 1 down to ~0 over the run.
export const cosine: Schedule = (epoch, total) =>
  total <= 1 ? 1.0 : 0.5 * (1 + Math.cos((Math.PI * epoch) / (total - 1)));

// Linear warmup to a 1.5x peak at 30% of the run, cosine decay after.
export const oneCycle: Schedule = (epoch, total) => {
  const peakAt = Math.max(1, Math.round(0.3 * total));
  if (epoch < peakAt) return 0.5 + ((1.5 - 0.5) * epoch) / peakAt;
  if (total - 1 <= peakAt) return 1.5;
  const t = (epoch - peakAt) / (total - 1 - peakAt);
  return 1.5 * 0.5 * (1 + Math.cos(Math.PI * Math.min(1, t)));
};

export const SCHEDULES: Record<string, Schedule> = {
  Step: step,
  Cosine: cosine,
  OneCycle: oneCycle,
};
