/** Slice-view plumbing: URL building and navigation clamping. */

export type Overlay =
  | { kind: "none" }
  | { kind: "gt" }
  | { kind: "prediction" }
  | { kind: "activation"; fid: number };

export interface SliceView {
  axis: number;
  index: number;
  channel: "flair" | "t1gd";
  overlay: Overlay;
}

export function defaultView(): SliceView {
  return { axis: 0, index: 0, channel: "flair", overlay: { kind: "none" } };
}

export function overlayParam(overlay: Overlay): string {
  return overlay.kind === "activation" ? `activation:${overlay.fid}` : overlay.kind;
}

export function sliceUrl(sid: string, caseId: string, view: SliceView): string {
  const q = new URLSearchParams({
    axis: String(view.axis),
    index: String(view.index),
    channel: view.channel,
    overlay: overlayParam(view.overlay),
  });
  return `/api/sessions/${sid}/images/${caseId}/slice?${q.toString()}`;
}

/** Out-of-range indices clamp instead of erroring; axis change re-clamps. */
export function clampIndex(dims: number[], axis: number, index: number): number {
  const extent = dims[axis] ?? 1;
  if (index < 0) return 0;
  if (index >= extent) return extent - 1;
  return index;
}

export function centerIndex(dims: number[], axis: number): number {
  return Math.floor((dims[axis] ?? 1) / 2);
}

/** Axis count follows the volume rank; 2D cases only expose axis 0. */
export function validAxes(dims: number[]): number[] {
  return dims.length === 2 ? [0] : dims.map((_, i) => i);
}
