import { describe, expect, it } from "vitest";
import type { ApiClient, JobSnapshot, Metrics } from "../src/api.js";
import { pollJob, renderJobStatus, renderMetrics } from "../src/dashboard.js";

function snap(state: JobSnapshot["state"], progress = 0): JobSnapshot {
  return {
    id: "j",
    session_id: "s",
    kind: "train_decoder",
    state,
    progress,
    result: null,
    error: state === "failed" ? "kaput" : "",
  };
}

function fakeApi(sequence: JobSnapshot[]): ApiClient {
  let i = 0;
  return {
    job: () => Promise.resolve(sequence[Math.min(i++, sequence.length - 1)]),
  } as unknown as ApiClient;
}

describe("job polling", () => {
  it("ticks through every snapshot and resolves on the terminal one", async () => {
    const seen: string[] = [];
    const final = await pollJob(
      fakeApi([snap("queued"), snap("running", 0.5), snap("done", 1)]),
      "j",
      (s) => seen.push(s.state),
      1,
    );
    expect(seen).toEqual(["queued", "running", "done"]);
    expect(final.state).toBe("done");
  });

  it("a failed job is terminal too", async () => {
    const final = await pollJob(fakeApi([snap("running", 0.2), snap("failed")]), "j", undefined, 1);
    expect(final.state).toBe("failed");
    expect(final.error).toBe("kaput");
  });
});

describe("status rendering", () => {
  it("failed jobs surface the error text", () => {
    expect(renderJobStatus(snap("failed"))).toContain("kaput");
  });

  it("running jobs show a progress percentage", () => {
    const html = renderJobStatus(snap("running", 0.42));
    expect(html).toContain("42%");
    expect(html).toContain("<progress");
  });

  it("no job means idle", () => {
    expect(renderJobStatus(null)).toContain("idle");
  });
});

describe("metrics rendering", () => {
  it("shows all three regions with mean and std to three decimals", () => {
    const metrics: Metrics = {
      image_ids: ["a", "b"],
      per_region: {
        ET: { mean: 0.71345, std: 0.068, dice: [0.7, 0.72] },
        TC: { mean: 0.81, std: 0.066, dice: [0.8, 0.82] },
        WT: { mean: 0.797, std: 0.065, dice: [0.79, 0.8] },
      },
    };
    const html = renderMetrics(metrics);
    for (const region of ["ET", "TC", "WT"]) expect(html).toContain(`<td>${region}</td>`);
    expect(html).toContain("0.713");
    expect(html).toContain("2 images");
  });

  it("prompts for decoder training when absent", () => {
    expect(renderMetrics(null)).toContain("train the decoder");
  });
});
