/** Channel taxonomy and the confidence palette shared with the backend. */

export const CHANNEL_NAMES = [
  "sharp_pleura",
  "fuzzy_pleura",
  "fascia_band",
  "a_line",
  "sub_a_line",
  "vertical_line",
] as const;

export const NUM_CHANNELS = CHANNEL_NAMES.length;

/** Fixed per-channel overlay colors, in /api/channels order. */
export const CHANNEL_COLORS: ReadonlyArray<[number, number, number]> = [
  [230, 25, 75],   // sharp_pleura - red
  [245, 130, 48],  // fuzzy_pleura - orange
  [255, 225, 25],  // fascia_band  - yellow
  [60, 180, 75],   // a_line       - green
  [67, 99, 216],   // sub_a_line   - blue
  [145, 30, 180],  // vertical_line - purple
];

/** Paintable confidence levels: the experiment's threshold grid. */
export const CONFIDENCE_PALETTE = [20, 40, 50, 60, 80, 100] as const;

/** All thresholds the preview can use (0 = any positive confidence). */
export const THRESHOLD_LEVELS = [0, 20, 40, 50, 60, 80, 100] as const;

export function snapToPalette(value: number): number {
  let best: number = CONFIDENCE_PALETTE[0];
  for (const level of CONFIDENCE_PALETTE) {
    if (Math.abs(level - value) < Math.abs(best - value)) {
      best = level;
    }
  }
  return best;
}
