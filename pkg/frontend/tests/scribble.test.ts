import { describe, expect, it } from "vitest";
import { ScribbleStore, planeToVoxel } from "../src/scribble.js";

describe("stroke accumulation", () => {
  it("one stroke of n pixels becomes n entries sharing one marker id", () => {
    const store = new ScribbleStore();
    store.beginStroke("object");
    store.extend([4, 5, 6]);
    store.extend([4, 5, 7]);
    store.extend([4, 6, 7]);
    store.endStroke();
    const entries = store.toEntries();
    expect(entries).toHaveLength(3);
    expect(new Set(entries.map((e) => e.marker_id)).size).toBe(1);
    expect(entries.every((e) => e.tag === "object")).toBe(true);
  });

  it("each stroke gets its own marker id", () => {
    const store = new ScribbleStore();
    store.beginStroke("object");
    store.extend([1, 1, 1]);
    store.endStroke();
    store.beginStroke("background");
    store.extend([2, 2, 2]);
    store.endStroke();
    const ids = store.toEntries().map((e) => e.marker_id);
    expect(new Set(ids).size).toBe(2);
  });

  it("revisiting a voxel inside one stroke does not duplicate it", () => {
    const store = new ScribbleStore();
    store.beginStroke("object");
    store.extend([3, 3, 3]);
    store.extend([3, 3, 3]);
    store.endStroke();
    expect(store.toEntries()).toHaveLength(1);
  });

  it("an empty gesture does not consume a marker id", () => {
    const store = new ScribbleStore();
    store.beginStroke("object");
    store.endStroke();
    store.beginStroke("object");
    store.extend([0, 0, 0]);
    store.endStroke();
    expect(store.count).toBe(1);
    expect(store.toEntries()[0].marker_id).toBe(1);
  });

  it("hasObject reflects tag presence", () => {
    const store = new ScribbleStore();
    store.beginStroke("background");
    store.extend([1, 2, 3]);
    store.endStroke();
    expect(store.hasObject()).toBe(false);
    store.beginStroke("object");
    store.extend([4, 4, 4]);
    store.endStroke();
    expect(store.hasObject()).toBe(true);
  });
});

describe("eraser", () => {
  it("removes touched voxels and drops emptied strokes", () => {
    const store = new ScribbleStore();
    store.beginStroke("object");
    store.extend([5, 5, 5]);
    store.extend([5, 5, 9]);
    store.endStroke();
    store.erase([5, 5, 5]);
    const entries = store.toEntries();
    expect(entries).toHaveLength(1);
    expect(entries[0].coord).toEqual([5, 5, 9]);
    store.erase([5, 5, 9]);
    expect(store.count).toBe(0);
  });

  it("radius widens the erased neighborhood", () => {
    const store = new ScribbleStore();
    store.beginStroke("object");
    store.extend([5, 5, 5]);
    store.extend([5, 5, 6]);
    store.extend([5, 5, 8]);
    store.endStroke();
    store.erase([5, 5, 5], 1);
    expect(store.toEntries().map((e) => e.coord)).toEqual([[5, 5, 8]]);
  });
});

describe("save and reload round-trip", () => {
  it("entries rebuild into identical scribbles", () => {
    const store = new ScribbleStore();
    store.beginStroke("object");
    store.extend([1, 2, 3]);
    store.extend([1, 2, 4]);
    store.endStroke();
    store.beginStroke("background");
    store.extend([9, 0, 0]);
    store.endStroke();
    const saved = store.toEntries();
    const reloaded = ScribbleStore.fromEntries(saved);
    expect(reloaded.toEntries()).toEqual(saved);
    expect(reloaded.all()).toEqual(store.all());
  });

  it("reloaded store issues fresh marker ids above the saved ones", () => {
    const store = new ScribbleStore();
    store.beginStroke("object");
    store.extend([1, 1, 1]);
    store.endStroke();
    const reloaded = ScribbleStore.fromEntries(store.toEntries());
    reloaded.beginStroke("object");
    reloaded.extend([2, 2, 2]);
    reloaded.endStroke();
    const ids = reloaded.toEntries().map((e) => e.marker_id);
    expect(new Set(ids).size).toBe(2);
  });
});

describe("plane to voxel mapping", () => {
  it("pins the viewed axis to the slice index in 3D", () => {
    expect(planeToVoxel(0, 7, 2, 3, 3)).toEqual([7, 2, 3]);
    expect(planeToVoxel(1, 7, 2, 3, 3)).toEqual([2, 7, 3]);
    expect(planeToVoxel(2, 7, 2, 3, 3)).toEqual([2, 3, 7]);
  });

  it("2D volumes map row/col directly", () => {
    expect(planeToVoxel(0, 0, 4, 9, 2)).toEqual([4, 9]);
  });
});
