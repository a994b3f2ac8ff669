/**
 * Blue-to-yellow similarity ramp.
 *
 * Must match the server's PLY heatmap export exactly (linear interpolation
 * between pure blue and pure yellow with half-up rounding) so on-screen
 * colors agree with exported files. Endpoints are also published by
 * GET /api/meta under "colormap".
 */

export const HEAT_LOW: [number, number, number] = [0, 0, 255];
export const HEAT_HIGH: [number, number, number] = [255, 255, 0];

export function heatColor(score: number, lo: number, hi: number): [number, number, number] {
  const t = hi > lo ? Math.min(1, Math.max(0, (score - lo) / (hi - lo))) : 0.5;
  return [
    Math.floor(HEAT_LOW[0] + t * (HEAT_HIGH[0] - HEAT_LOW[0]) + 0.5),
    Math.floor(HEAT_LOW[1] + t * (HEAT_HIGH[1] - HEAT_LOW[1]) + 0.5),
    Math.floor(HEAT_LOW[2] + t * (HEAT_HIGH[2] - HEAT_LOW[2]) + 0.5),
  ];
}

/** Categorical instance palette; gray is reserved for noise points. */
export const NOISE_COLOR: [number, number, number] = [128, 128, 128];
export const INSTANCE_PALETTE: [number, number, number][] = [
  [230, 25, 75],
  [60, 180, 75],
  [255, 225, 25],
  [0, 130, 200],
  [245, 130, 48],
  [145, 30, 180],
  [70, 240, 240],
  [240, 50, 230],
  [210, 245, 60],
  [0, 128, 128],
  [220, 190, 255],
  [170, 110, 40],
];

export function instanceColor(instanceId: number): [number, number, number] {
  return INSTANCE_PALETTE[instanceId % INSTANCE_PALETTE.length];
}
