/** Job polling and the training/evaluation readouts. */
import type { ApiClient, JobSnapshot, Metrics } from "./api.js";

const TERMINAL = new Set(["done", "failed"]);

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

/**
 * Poll a job until it reaches a terminal state. onTick fires on every
 * snapshot, including the final one. Resolves with the final snapshot;
 * callers decide what a failed job means for them.
 */
export async function pollJob(
  api: ApiClient,
  jobId: string,
  onTick?: (snap: JobSnapshot) => void,
  intervalMs: number = 500,
): Promise<JobSnapshot> {
  for (;;) {
    const snap = await api.job(jobId);
    if (onTick) onTick(snap);
    if (TERMINAL.has(snap.state)) return snap;
    await sleep(intervalMs);
  }
}

export function renderJobStatus(snap: JobSnapshot | null): string {
  if (snap === null) return `<div class="job-status idle">idle</div>`;
  if (snap.state === "failed") {
    return `<div class="job-status failed">${snap.kind} failed: ${snap.error}</div>`;
  }
  const pct = Math.round(snap.progress * 100);
  if (snap.state === "done") {
    return `<div class="job-status done">${snap.kind} done</div>`;
  }
  return `<div class="job-status running">${snap.kind} ${snap.state} ${pct}%
<progress max="100" value="${pct}"></progress></div>`;
}

export function renderMetrics(metrics: Metrics | null): string {
  if (metrics === null) {
    return `<div class="metrics empty">train the decoder to see test Dice</div>`;
  }
  const rows = ["ET", "TC", "WT"]
    .map((r) => {
      const s = metrics.per_region[r];
      return `<tr><td>${r}</td><td>${s.mean.toFixed(3)}</td><td>${s.std.toFixed(3)}</td></tr>`;
    })
    .join("\n");
  return `<div class="metrics">
<div class="metrics-header">test Dice over ${metrics.image_ids.length} images</div>
<table class="metrics-table">
<thead><tr><th>region</th><th>mean</th><th>std</th></tr></thead>
<tbody>${rows}</tbody>
</table>
</div>`;
}
