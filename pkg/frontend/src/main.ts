/** DOM wiring for the workbench page. Everything testable lives in the
 * other modules; this file only reads events and writes innerHTML. */
import { ApiClient, ApiError } from "./api.js";
import type { JobSnapshot } from "./api.js";
import { pollJob, renderJobStatus, renderMetrics } from "./dashboard.js";
import { renderGallery } from "./gallery.js";
import { renderRanking } from "./ranking.js";
import { ScribbleStore, planeToVoxel } from "./scribble.js";
import type { Tag } from "./scribble.js";
import { centerIndex, clampIndex, defaultView, sliceUrl, validAxes } from "./slices.js";
import type { Overlay, SliceView } from "./slices.js";
import { loadWorkbenchState } from "./state.js";
import type { WorkbenchState } from "./state.js";

const api = new ApiClient("");

const els = {
  setup: document.getElementById("setup") as HTMLElement,
  workbench: document.getElementById("workbench") as HTMLElement,
  viewer: document.getElementById("viewer") as HTMLElement,
  viewerControls: document.getElementById("viewer-controls") as HTMLElement,
  gallery: document.getElementById("gallery") as HTMLElement,
  ranking: document.getElementById("ranking") as HTMLElement,
  jobStatus: document.getElementById("job-status") as HTMLElement,
  metrics: document.getElementById("metrics") as HTMLElement,
  message: document.getElementById("message") as HTMLElement,
};

let state: WorkbenchState | null = null;
let view: SliceView = defaultView();
let scribbles = new ScribbleStore();
let tool: { mode: "brush" | "eraser"; tag: Tag } = { mode: "brush", tag: "object" };
let drawing = false;

function say(text: string, isError = false): void {
  els.message.textContent = text;
  els.message.className = isError ? "message error" : "message";
}

function fail(err: unknown): void {
  if (err instanceof ApiError) say(err.detail, true);
  else say(String(err), true);
}

function currentDims(): number[] {
  if (!state || state.currentCase === null) return [1, 1, 1];
  const rec = state.cases.find((c) => c.case_id === state!.currentCase);
  return rec ? rec.dims : [1, 1, 1];
}

// ---- rendering ------------------------------------------------------------

function renderViewerControls(): string {
  const dims = currentDims();
  const axes = validAxes(dims)
    .map((a) => `<option value="${a}"${a === view.axis ? " selected" : ""}>axis ${a}</option>`)
    .join("");
  const overlays = ["none", "gt", "prediction", "activation"] as const;
  const current = view.overlay.kind;
  const overlayOpts = overlays
    .map((o) => `<option value="${o}"${o === current ? " selected" : ""}>${o}</option>`)
    .join("");
  return `<span class="case-name">${state?.currentCase ?? "no case"}</span>
<select id="axis-select">${axes}</select>
<input id="index-slider" type="range" min="0" max="${(dims[view.axis] ?? 1) - 1}" value="${view.index}">
<span id="index-readout">${view.index}</span>
<select id="channel-select">
  <option value="flair"${view.channel === "flair" ? " selected" : ""}>flair</option>
  <option value="t1gd"${view.channel === "t1gd" ? " selected" : ""}>t1gd</option>
</select>
<select id="overlay-select">${overlayOpts}</select>
<span class="tool-group">
  <button id="tool-object" class="${tool.mode === "brush" && tool.tag === "object" ? "on" : ""}">object</button>
  <button id="tool-background" class="${tool.mode === "brush" && tool.tag === "background" ? "on" : ""}">background</button>
  <button id="tool-eraser" class="${tool.mode === "eraser" ? "on" : ""}">eraser</button>
  <button id="save-markers">save markers (${scribbles.count} strokes)</button>
</span>`;
}

function renderViewer(): void {
  els.viewerControls.innerHTML = renderViewerControls();
  if (!state || state.currentCase === null) {
    els.viewer.innerHTML = `<div class="viewer-empty">no case selected</div>`;
    return;
  }
  const src = sliceUrl(state.info.id, state.currentCase, view);
  els.viewer.innerHTML = `<div class="slice-stack">
<img id="slice-img" src="${src}" alt="slice">
<canvas id="scribble-canvas"></canvas>
</div>`;
  const img = document.getElementById("slice-img") as HTMLImageElement;
  const canvas = document.getElementById("scribble-canvas") as HTMLCanvasElement;
  img.onload = () => {
    canvas.width = img.naturalWidth;
    canvas.height = img.naturalHeight;
    canvas.style.width = img.clientWidth + "px";
    canvas.style.height = img.clientHeight + "px";
    drawScribbles(canvas);
  };
  wireCanvas(canvas);
  wireViewerControls();
}

function drawScribbles(canvas: HTMLCanvasElement): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const dims = currentDims();
  const rank = dims.length;
  for (const stroke of scribbles.all()) {
    ctx.fillStyle = stroke.tag === "object" ? "rgba(255,80,80,0.8)" : "rgba(80,120,255,0.8)";
    for (const v of stroke.voxels) {
      let row: number;
      let col: number;
      if (rank === 2) {
        [row, col] = v;
      } else {
        if (v[view.axis] !== view.index) continue;
        const others = [0, 1, 2].filter((a) => a !== view.axis);
        row = v[others[0]];
        col = v[others[1]];
      }
      ctx.fillRect(col, row, 1, 1);
    }
  }
}

// ---- canvas events --------------------------------------------------------

function canvasVoxel(canvas: HTMLCanvasElement, ev: PointerEvent): number[] {
  const rect = canvas.getBoundingClientRect();
  const col = Math.floor(((ev.clientX - rect.left) / rect.width) * canvas.width);
  const row = Math.floor(((ev.clientY - rect.top) / rect.height) * canvas.height);
  const dims = currentDims();
  // snap to the voxel grid and clamp to the slice
  const r = Math.max(0, Math.min(canvas.height - 1, row));
  const c = Math.max(0, Math.min(canvas.width - 1, col));
  return planeToVoxel(view.axis, view.index, r, c, dims.length);
}

function wireCanvas(canvas: HTMLCanvasElement): void {
  canvas.onpointerdown = (ev) => {
    drawing = true;
    canvas.setPointerCapture(ev.pointerId);
    if (tool.mode === "brush") scribbles.beginStroke(tool.tag);
    applyAt(canvas, ev);
  };
  canvas.onpointermove = (ev) => {
    if (drawing) applyAt(canvas, ev);
  };
  canvas.onpointerup = () => {
    drawing = false;
    if (tool.mode === "brush") scribbles.endStroke();
    els.viewerControls.innerHTML = renderViewerControls();
    wireViewerControls();
  };
}

function applyAt(canvas: HTMLCanvasElement, ev: PointerEvent): void {
  const voxel = canvasVoxel(canvas, ev);
  if (tool.mode === "brush") scribbles.extend(voxel);
  else scribbles.erase(voxel, 1);
  drawScribbles(canvas);
}

// ---- control wiring -------------------------------------------------------

function wireViewerControls(): void {
  const dims = currentDims();
  const axis = document.getElementById("axis-select") as HTMLSelectElement | null;
  if (axis) {
    axis.onchange = () => {
      view.axis = Number(axis.value);
      view.index = clampIndex(dims, view.axis, view.index);
      renderViewer();
    };
  }
  const slider = document.getElementById("index-slider") as HTMLInputElement | null;
  if (slider) {
    slider.oninput = () => {
      view.index = clampIndex(dims, view.axis, Number(slider.value));
      renderViewer();
    };
  }
  const channel = document.getElementById("channel-select") as HTMLSelectElement | null;
  if (channel) {
    channel.onchange = () => {
      view.channel = channel.value as SliceView["channel"];
      renderViewer();
    };
  }
  const overlay = document.getElementById("overlay-select") as HTMLSelectElement | null;
  if (overlay) {
    overlay.onchange = () => {
      view.overlay = overlayFromChoice(overlay.value);
      renderViewer();
    };
  }
  const pairs: [string, () => void][] = [
    ["tool-object", () => (tool = { mode: "brush", tag: "object" })],
    ["tool-background", () => (tool = { mode: "brush", tag: "background" })],
    ["tool-eraser", () => (tool = { mode: "eraser", tag: tool.tag })],
  ];
  for (const [id, set] of pairs) {
    const btn = document.getElementById(id);
    if (btn) {
      btn.addEventListener("click", () => {
        set();
        renderViewer();
      });
    }
  }
  const save = document.getElementById("save-markers");
  if (save) save.addEventListener("click", () => void saveMarkers());
}

function overlayFromChoice(choice: string): Overlay {
  if (choice === "activation") {
    const fid = state && state.filters.length > 0 ? state.filters[0].fid : 0;
    return { kind: "activation", fid };
  }
  return { kind: choice as "none" | "gt" | "prediction" };
}

// ---- actions --------------------------------------------------------------

async function refresh(): Promise<void> {
  if (!state) return;
  state = await loadWorkbenchState(api, state.info.id);
  renderAll();
}

function renderAll(): void {
  if (!state) return;
  renderViewer();
  els.gallery.innerHTML = renderGallery(
    state.info.id,
    state.filters,
    { ...view, index: centerIndex(currentDims(), view.axis) },
    state.info.scores_stale,
  );
  els.ranking.innerHTML = state.rankingBlocked
    ? `<div class="ranking"><div class="budget">${state.info.selected.length}/${state.info.budget} images selected</div><div class="ranking-empty">no scores yet; press score</div></div>`
    : renderRanking(state.ranking, state.info);
  els.metrics.innerHTML = renderMetrics(state.metrics);
  wireGallery();
  wireRanking();
}

async function saveMarkers(): Promise<void> {
  if (!state || state.currentCase === null) return;
  if (!scribbles.hasObject()) {
    say("draw at least one object stroke before saving", true);
    return;
  }
  try {
    const res = await api.putMarkers(state.info.id, state.currentCase, scribbles.toEntries());
    say(`saved ${res.n_entries} marker voxels on ${res.case_id}`);
    await refresh();
  } catch (err) {
    fail(err);
  }
}

async function runJob(start: () => Promise<{ job: string }>): Promise<JobSnapshot | null> {
  try {
    const { job } = await start();
    const snap = await pollJob(api, job, (s) => {
      els.jobStatus.innerHTML = renderJobStatus(s);
    });
    if (snap.state === "failed") say(snap.error, true);
    await refresh();
    return snap;
  } catch (err) {
    fail(err);
    return null;
  }
}

function wireGallery(): void {
  els.gallery.querySelectorAll<HTMLButtonElement>(".label-btn").forEach((btn) => {
    btn.addEventListener("click", () => {
      const fid = Number(btn.dataset.fid);
      const label = btn.dataset.label ?? "none";
      api
        .labelFilter(state!.info.id, fid, label)
        .then(() => refresh())
        .catch(fail);
    });
  });
}

function wireRanking(): void {
  els.ranking.querySelectorAll<HTMLButtonElement>(".select-btn").forEach((btn) => {
    btn.addEventListener("click", () => {
      const caseId = btn.dataset.case!;
      api
        .select(state!.info.id, caseId)
        .then((res) => {
          say(
            res.was_recommended
              ? `selected ${caseId} (recommended)`
              : `selected ${caseId}, overriding the recommendation`,
          );
          scribbles = new ScribbleStore();
          state!.currentCase = caseId;
          return refresh();
        })
        .catch(fail);
    });
  });
}

function wireDashboard(): void {
  (document.getElementById("btn-learn") as HTMLButtonElement).onclick = () =>
    void runJob(() => api.learn(state!.info.id));
  (document.getElementById("btn-score") as HTMLButtonElement).onclick = () =>
    void runJob(() => api.score(state!.info.id));
  (document.getElementById("btn-encoder") as HTMLButtonElement).onclick = () =>
    void runJob(() => api.trainEncoderRest(state!.info.id));
  (document.getElementById("btn-decoder") as HTMLButtonElement).onclick = () => {
    const epochs = Number((document.getElementById("decoder-epochs") as HTMLInputElement).value);
    void runJob(() => api.trainDecoder(state!.info.id, { epochs }));
  };
  (document.getElementById("btn-checkpoint") as HTMLButtonElement).onclick = () => {
    api
      .checkpoint(state!.info.id)
      .then((res) => say(`checkpoint written to ${res.path}`))
      .catch(fail);
  };
}

// ---- entry ----------------------------------------------------------------

async function openSession(sid: string): Promise<void> {
  state = await loadWorkbenchState(api, sid);
  if (state.currentCase !== null) {
    const dims = currentDims();
    view = defaultView();
    view.index = centerIndex(dims, view.axis);
  }
  els.setup.hidden = true;
  els.workbench.hidden = false;
  location.hash = sid;
  renderAll();
  wireDashboard();
}

function wireSetup(): void {
  const form = document.getElementById("setup-form") as HTMLFormElement;
  form.onsubmit = (ev) => {
    ev.preventDefault();
    const manifest = (document.getElementById("manifest-path") as HTMLInputElement).value;
    const budget = Number((document.getElementById("budget-input") as HTMLInputElement).value);
    api
      .createSession({ manifest_path: manifest, budget })
      .then((res) => openSession(res.id))
      .catch(fail);
  };
}

async function boot(): Promise<void> {
  wireSetup();
  const sid = location.hash.replace(/^#/, "");
  if (sid) {
    try {
      await openSession(sid);
      return;
    } catch (err) {
      // stale hash from an old server run; fall back to the setup form
      location.hash = "";
      fail(err);
    }
  }
  els.setup.hidden = false;
  els.workbench.hidden = true;
}

void boot();
