/**
 * Viewer state and the pure color-buffer computations behind it.
 *
 * The viewer performs no scoring or clustering of its own: scores arrive
 * per superpoint from /api/query, get broadcast to points through the
 * superpoint id array, and recoloring rewrites only an RGB buffer that the
 * renderer uploads. The heatmap buffer is kept when an instance overlay is
 * shown, so toggling the overlay off restores the exact previous coloring.
 */

import { heatColor, instanceColor, NOISE_COLOR } from "./colormap";
import type { InstanceRecord, QueryResponse } from "./api";
import type { ScenePayload } from "./payload";

export interface HistoryEntry {
  prompt: string;
  topScore: number;
  normalization: { lo: number; hi: number };
}

export class ViewerState {
  scene: ScenePayload | null = null;
  activePrompt: string | null = null;
  pointScores: Float32Array | null = null;
  window: { lo: number; hi: number } | null = null;
  threshold = 0;
  heatmapColors: Uint8Array | null = null;
  overlayColors: Uint8Array | null = null;
  overlayInstances: InstanceRecord[] = [];
  overlayActive = false;
  readonly history: HistoryEntry[] = [];

  setScene(scene: ScenePayload): void {
    this.scene = scene;
  }

  /** Broadcast per-superpoint scores to points and rebuild the heat buffer. */
  applyQuery(result: QueryResponse): Uint8Array {
    if (!this.scene) throw new Error("no scene loaded");
    const n = this.scene.count;
    const scores = new Float32Array(n);
    const sp = this.scene.superpoints;
    for (let i = 0; i < n; i++) {
      scores[i] = result.sp_scores[String(sp[i])] ?? 0;
    }
    this.activePrompt = result.prompt;
    this.pointScores = scores;
    this.window = { ...result.normalization };
    this.threshold = clampToRange(this.threshold, this.scoreRange());
    this.heatmapColors = buildHeatBuffer(scores, this.window.lo, this.window.hi);
    this.overlayActive = false;
    this.overlayColors = null;
    this.overlayInstances = [];
    let top = -Infinity;
    for (const v of Object.values(result.sp_scores)) top = Math.max(top, v);
    this.history.push({
      prompt: result.prompt,
      topScore: top,
      normalization: { ...result.normalization },
    });
    return this.heatmapColors;
  }

  scoreRange(): { min: number; max: number } {
    if (!this.pointScores || this.pointScores.length === 0) return { min: 0, max: 1 };
    let min = Infinity;
    let max = -Infinity;
    for (const v of this.pointScores) {
      if (v < min) min = v;
      if (v > max) max = v;
    }
    return { min, max };
  }

  /** Instance overlay colors; noise and unselected points stay gray. */
  applyInstances(instances: InstanceRecord[]): Uint8Array {
    if (!this.scene) throw new Error("no scene loaded");
    const buf = new Uint8Array(this.scene.count * 3);
    for (let i = 0; i < this.scene.count; i++) {
      buf[i * 3] = NOISE_COLOR[0];
      buf[i * 3 + 1] = NOISE_COLOR[1];
      buf[i * 3 + 2] = NOISE_COLOR[2];
    }
    for (const inst of instances) {
      const [r, g, b] = instanceColor(inst.id);
      for (const p of inst.point_indices) {
        buf[p * 3] = r;
        buf[p * 3 + 1] = g;
        buf[p * 3 + 2] = b;
      }
    }
    this.overlayInstances = instances;
    this.overlayColors = buf;
    this.overlayActive = true;
    return buf;
  }

  /** Colors the renderer should show right now. */
  currentColors(): Uint8Array | null {
    if (this.overlayActive && this.overlayColors) return this.overlayColors;
    if (this.heatmapColors) return this.heatmapColors;
    return this.scene ? this.scene.colors : null;
  }

  toggleOverlay(show: boolean): Uint8Array | null {
    this.overlayActive = show && this.overlayColors !== null;
    return this.currentColors();
  }
}

export function buildHeatBuffer(scores: Float32Array, lo: number, hi: number): Uint8Array {
  const buf = new Uint8Array(scores.length * 3);
  for (let i = 0; i < scores.length; i++) {
    const [r, g, b] = heatColor(scores[i], lo, hi);
    buf[i * 3] = r;
    buf[i * 3 + 1] = g;
    buf[i * 3 + 2] = b;
  }
  return buf;
}

export function clampToRange(value: number, range: { min: number; max: number }): number {
  return Math.min(range.max, Math.max(range.min, value));
}

/** Fraction of the given point set inside the top score decile. */
export function fractionInTopDecile(scores: Float32Array, subset: Iterable<number>): number {
  const sorted = Array.from(scores).sort((a, b) => a - b);
  const cut = sorted[Math.max(0, Math.floor(sorted.length * 0.9) - 1)];
  let inside = 0;
  let total = 0;
  for (const idx of subset) {
    total += 1;
    if (scores[idx] >= cut) inside += 1;
  }
  return total ? inside / total : 0;
}
