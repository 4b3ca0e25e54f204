/** Scribble model: strokes drawn on a 2D slice, stored in volume space.
 *
 * A stroke is one brush gesture; each gets its own marker id so the
 * learner can cluster per marker. The eraser removes voxels from every
 * stroke it touches. Strokes accumulate until saved with PUT markers.
 */
import type { MarkerEntry } from "./api.js";

export type Tag = "object" | "background";

export interface Stroke {
  markerId: number;
  tag: Tag;
  voxels: number[][];
}

function key(coord: number[]): string {
  return coord.join(",");
}

/** Map a 2D slice pixel back to the volume voxel it shows. */
export function planeToVoxel(
  axis: number,
  index: number,
  row: number,
  col: number,
  rank: number,
): number[] {
  if (rank === 2) return [row, col];
  const coord = [0, 0, 0];
  coord[axis] = index;
  const others = [0, 1, 2].filter((a) => a !== axis);
  coord[others[0]] = row;
  coord[others[1]] = col;
  return coord;
}

export class ScribbleStore {
  private strokes: Stroke[] = [];
  private nextMarker = 1;
  private active: Stroke | null = null;

  beginStroke(tag: Tag): void {
    this.active = { markerId: this.nextMarker, tag, voxels: [] };
  }

  /** Add one voxel to the active stroke, deduplicated within the stroke. */
  extend(coord: number[]): void {
    if (!this.active) return;
    const k = key(coord);
    if (!this.active.voxels.some((v) => key(v) === k)) {
      this.active.voxels.push([...coord]);
    }
  }

  /** An empty gesture does not consume a marker id. */
  endStroke(): void {
    if (this.active && this.active.voxels.length > 0) {
      this.strokes.push(this.active);
      this.nextMarker += 1;
    }
    this.active = null;
  }

  /** Remove every voxel within a Chebyshev radius; drop emptied strokes. */
  erase(coord: number[], radius: number = 0): void {
    const near = (v: number[]) =>
      v.length === coord.length && v.every((c, i) => Math.abs(c - coord[i]) <= radius);
    this.strokes = this.strokes
      .map((s) => ({ ...s, voxels: s.voxels.filter((v) => !near(v)) }))
      .filter((s) => s.voxels.length > 0);
  }

  clear(): void {
    this.strokes = [];
    this.nextMarker = 1;
    this.active = null;
  }

  all(): Stroke[] {
    return this.strokes.map((s) => ({ ...s, voxels: s.voxels.map((v) => [...v]) }));
  }

  get count(): number {
    return this.strokes.length;
  }

  hasObject(): boolean {
    return this.strokes.some((s) => s.tag === "object");
  }

  /** Flatten to the PUT markers payload. */
  toEntries(): MarkerEntry[] {
    const out: MarkerEntry[] = [];
    for (const s of this.strokes) {
      for (const v of s.voxels) {
        out.push({ coord: [...v], marker_id: s.markerId, tag: s.tag });
      }
    }
    return out;
  }

  /** Rebuild from saved entries so a reload shows identical scribbles. */
  static fromEntries(entries: MarkerEntry[]): ScribbleStore {
    const store = new ScribbleStore();
    const byMarker = new Map<number, MarkerEntry[]>();
    for (const e of entries) {
      const group = byMarker.get(e.marker_id) ?? [];
      group.push(e);
      byMarker.set(e.marker_id, group);
    }
    for (const [markerId, group] of [...byMarker.entries()].sort((a, b) => a[0] - b[0])) {
      store.strokes.push({
        markerId,
        tag: group[0].tag,
        voxels: group.map((e) => [...e.coord]),
      });
      store.nextMarker = Math.max(store.nextMarker, markerId + 1);
    }
    return store;
  }
}
