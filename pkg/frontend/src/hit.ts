import type { Keypoint } from "./types.js";

export const HIT_RADIUS_PX = 14;

/** Map a click at image pixel (x, y) to the nearest clickable keypoint
 * within the hit radius; null when nothing is close enough. Ties go to
 * the lower id so the answer never depends on array order. */
export function hitTest(
  keypoints: Keypoint[],
  x: number,
  y: number,
  radius = HIT_RADIUS_PX,
): number | null {
  let best: number | null = null;
  let bestDist = Infinity;
  for (const kp of keypoints) {
    const d = Math.hypot(kp.u - x, kp.v - y);
    if (d > radius) continue;
    if (d < bestDist || (d === bestDist && best !== null && kp.id < best)) {
      bestDist = d;
      best = kp.id;
    }
  }
  return best;
}
