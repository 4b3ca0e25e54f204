/** End-to-end loop against a live server, driven through the UI's own
 * modules: create a session, scribble one case, learn, label a filter,
 * re-score, check the rendered recommendation, and select it at budget 2.
 */
import { spawn, spawnSync } from "node:child_process";
import type { ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { ApiClient } from "../src/api.js";
import { pollJob } from "../src/dashboard.js";
import { atBudget, budgetLine, formatAggregate, renderRanking } from "../src/ranking.js";
import { ScribbleStore, planeToVoxel } from "../src/scribble.js";
import { defaultView, sliceUrl } from "../src/slices.js";
import { loadWorkbenchState } from "../src/state.js";

const port = 8720 + (process.pid % 700);
const base = `http://127.0.0.1:${port}`;
let root = "";
let server: ChildProcess | null = null;
const api = new ApiClient(base);

async function waitForHealth(timeoutMs = 60_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const res = await api.health();
      if (res.status === "ok") return;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) throw new Error("server never became healthy");
    await new Promise((r) => setTimeout(r, 250));
  }
}

beforeAll(async () => {
  root = mkdtempSync(join(tmpdir(), "flimseg-ui-"));
  const synth = spawnSync(
    "flimseg",
    ["synth", "--cases", "6", "--dims", "16", "--seed", "0", "--out", root],
    { encoding: "utf8" },
  );
  if (synth.status !== 0) throw new Error(`synth failed: ${synth.stderr}`);
  server = spawn("flimseg", ["serve", "--data-root", root, "--port", String(port)], {
    stdio: "ignore",
  });
  await waitForHealth();
});

afterAll(async () => {
  if (server) {
    server.kill();
    await new Promise((r) => server!.once("exit", r));
  }
  rmSync(root, { recursive: true, force: true });
});

function scribbleTumorAndBackground(dims: number[]): ScribbleStore {
  // object stroke through the tumor (volumes center it), background at a corner
  const store = new ScribbleStore();
  const mid = dims.map((d) => Math.floor(d / 2));
  const axisIndex = mid[0];
  store.beginStroke("object");
  for (let dc = -2; dc <= 2; dc++) {
    store.extend(planeToVoxel(0, axisIndex, mid[1], mid[2] + dc, dims.length));
    store.extend(planeToVoxel(0, axisIndex, mid[1] + 1, mid[2] + dc, dims.length));
  }
  store.endStroke();
  store.beginStroke("background");
  for (let dc = 0; dc < 4; dc++) {
    store.extend(planeToVoxel(0, axisIndex, 2, 2 + dc, dims.length));
  }
  store.endStroke();
  return store;
}

describe("interactive loop through the UI modules", () => {
  it("runs scribble, learn, label, score, recommend, select to budget", async () => {
    const created = await api.createSession({ manifest_path: "manifest.json", budget: 2 });
    expect(created.n_train).toBeGreaterThanOrEqual(3);
    const sid = created.id;

    // starting image comes from the service, then enters the selected set
    const first = (await api.suggestFirst(sid)).case_id;
    await api.select(sid, first);

    // scribble the suggested case through the stroke model
    const { cases } = await api.images(sid);
    const dims = cases.find((c) => c.case_id === first)!.dims;
    const store = scribbleTumorAndBackground(dims);
    const saved = await api.putMarkers(sid, first, store.toEntries());
    expect(saved.n_entries).toBe(store.toEntries().length);
    expect(saved.marker_ids).toEqual([1, 2]);

    // the slice the user was drawing on must be fetchable exactly as built
    const sliceRes = await fetch(
      api.url(sliceUrl(sid, first, { ...defaultView(), index: Math.floor(dims[0] / 2) })),
    );
    expect(sliceRes.status).toBe(200);
    expect(sliceRes.headers.get("content-type")).toContain("image/png");

    // learn layer 1 from the markers
    const learnJob = (await api.learn(sid)).job;
    const learned = await pollJob(api, learnJob, undefined, 100);
    expect(learned.state).toBe("done");

    const { filters } = await api.filters(sid);
    expect(filters.length).toBeGreaterThan(0);
    expect(filters.every((f) => f.label === "none")).toBe(true);

    // the activation thumbnail URL the gallery would show resolves too
    const thumb = await fetch(
      api.url(
        sliceUrl(sid, first, {
          ...defaultView(),
          index: Math.floor(dims[0] / 2),
          overlay: { kind: "activation", fid: filters[0].fid },
        }),
      ),
    );
    expect(thumb.status).toBe(200);

    // label one filter good for whole tumor, then re-score
    await api.labelFilter(sid, filters[0].fid, "good_WT");
    const scoreJob = (await api.score(sid)).job;
    const scored = await pollJob(api, scoreJob, undefined, 100);
    expect(scored.state).toBe("done");

    // a recommendation is visible and the rendered table shows the API's
    // aggregate to exactly three decimals
    const state = await loadWorkbenchState(api, sid);
    expect(state.rankingBlocked).toBe(false);
    expect(state.ranking).not.toBeNull();
    const ranking = state.ranking!;
    expect(ranking.recommended).not.toBeNull();
    expect(ranking.rows.length).toBe(created.n_train - 1);

    const html = renderRanking(ranking, state.info);
    for (const row of ranking.rows) {
      expect(html).toContain(`<td class="aggregate-cell">${row.aggregate.toFixed(3)}</td>`);
    }
    const recRow = ranking.rows.find((r) => r.image_id === ranking.recommended)!;
    const recCell = new RegExp(
      `class="rank-row recommended" data-case="${recRow.image_id}">\\s*` +
        `<td>${recRow.rank}</td>[\\s\\S]*?<td class="aggregate-cell">([0-9.]+)</td>`,
    ).exec(html);
    expect(recCell).not.toBeNull();
    expect(recCell![1]).toBe(formatAggregate(recRow.aggregate));
    expect(recRow.rank).toBe(1);

    // accept the recommendation, landing exactly on the budget
    const picked = await api.select(sid, ranking.recommended!);
    expect(picked.was_recommended).toBe(true);
    expect(picked.overridden).toBe(false);

    const info = await api.session(sid);
    expect(info.selected).toHaveLength(2);
    expect(atBudget(info)).toBe(true);
    expect(budgetLine(info)).toBe("2/2 images selected");
    expect(info.remaining).not.toContain(ranking.recommended);

    // at budget every select control the UI would render is disabled
    const frozen = renderRanking(ranking, info);
    expect(frozen.match(/<button[^>]*select-btn[^>]*disabled/g)).toHaveLength(
      ranking.rows.length,
    );
  });
});
