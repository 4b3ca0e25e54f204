/** Filter gallery: activation thumbnails plus the three-way label control. */
import type { FilterInfo } from "./api.js";
import { sliceUrl } from "./slices.js";
import type { SliceView } from "./slices.js";

export const LABELS = ["good_WT", "good_ET", "none"] as const;
export type FilterLabel = (typeof LABELS)[number];

function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** Thumbnail URL: the filter's binarized activation over its source image. */
export function activationThumbUrl(
  sid: string,
  filter: FilterInfo,
  view: SliceView,
): string {
  return sliceUrl(sid, filter.source_image, {
    ...view,
    overlay: { kind: "activation", fid: filter.fid },
  });
}

function labelButtons(filter: FilterInfo): string {
  return LABELS.map((label) => {
    const on = filter.label === label ? " on" : "";
    return (
      `<button class="label-btn${on}" data-fid="${filter.fid}"` +
      ` data-label="${label}">${label}</button>`
    );
  }).join("");
}

export function renderFilterCard(sid: string, filter: FilterInfo, view: SliceView): string {
  const src = activationThumbUrl(sid, filter, view);
  return `<div class="filter-card" data-fid="${filter.fid}">
  <img class="filter-thumb" src="${esc(src)}" alt="filter ${filter.fid} activation">
  <div class="filter-meta">#${filter.fid} ${esc(filter.modality)} from ${esc(filter.source_image)} (marker ${filter.marker_id})</div>
  <div class="filter-labels">${labelButtons(filter)}</div>
</div>`;
}

/**
 * Full gallery panel. When scores are stale (labels changed since the last
 * scoring pass) a badge tells the user the ranking below no longer reflects
 * what they see here.
 */
export function renderGallery(
  sid: string,
  filters: FilterInfo[],
  view: SliceView,
  stale: boolean,
): string {
  if (filters.length === 0) {
    return `<div class="gallery empty">no filters yet; save markers and press learn</div>`;
  }
  const badge = stale ? `<span class="stale-badge">scores stale, re-run scoring</span>` : "";
  const labeled = filters.filter((f) => f.label !== "none").length;
  const cards = filters.map((f) => renderFilterCard(sid, f, view)).join("\n");
  return `<div class="gallery">
<div class="gallery-header">${filters.length} filters, ${labeled} labeled ${badge}</div>
<div class="gallery-grid">${cards}</div>
</div>`;
}
