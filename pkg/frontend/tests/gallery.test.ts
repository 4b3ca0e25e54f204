import { describe, expect, it } from "vitest";
import type { FilterInfo } from "../src/api.js";
import { activationThumbUrl, renderGallery } from "../src/gallery.js";
import { defaultView } from "../src/slices.js";

function filter(fid: number, label = "none"): FilterInfo {
  return {
    fid,
    modality: "flair",
    index: fid,
    source_image: "case03",
    marker_id: 2,
    label,
  };
}

const view = { ...defaultView(), index: 8 };

describe("filter gallery", () => {
  it("renders one card per learned filter", () => {
    const html = renderGallery("s1", [filter(0), filter(1), filter(2)], view, false);
    expect(html.match(/filter-card/g)).toHaveLength(3);
    expect(html).toContain("3 filters");
  });

  it("thumbnails fetch the filter's activation on its source image", () => {
    const url = activationThumbUrl("s1", filter(4), view);
    expect(url).toContain("/api/sessions/s1/images/case03/slice?");
    expect(decodeURIComponent(url)).toContain("overlay=activation:4");
  });

  it("marks the active label button", () => {
    const html = renderGallery("s1", [filter(0, "good_WT")], view, false);
    expect(html).toContain(`class="label-btn on" data-fid="0" data-label="good_WT"`);
    expect(html).toContain(`class="label-btn" data-fid="0" data-label="good_ET"`);
    expect(html).toContain("1 labeled");
  });

  it("shows the stale badge only after relabeling invalidates scores", () => {
    const fresh = renderGallery("s1", [filter(0)], view, false);
    expect(fresh).not.toContain("stale-badge");
    const stale = renderGallery("s1", [filter(0)], view, true);
    expect(stale).toContain("stale-badge");
    expect(stale).toContain("re-run scoring");
  });

  it("explains what to do when no filters exist yet", () => {
    const html = renderGallery("s1", [], view, false);
    expect(html).toContain("no filters yet");
  });
});
