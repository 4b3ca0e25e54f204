/** Typed client for the workbench HTTP API.
 *
 * Every number the UI displays comes out of these responses; the client
 * never recomputes scores, thresholds, or Dice values locally.
 */

export interface SessionInfo {
  id: string;
  budget: number;
  selected: string[];
  remaining: string[];
  recommended: string | null;
  scores_stale: boolean;
  stopped: boolean;
  n_filters: number;
  encoder_depth: number;
  has_net: boolean;
  marked: string[];
  stop_threshold: number | null;
}

export interface CaseInfo {
  case_id: string;
  split: string;
  mode: string;
  dims: number[];
  selected: boolean;
  marked: boolean;
  has_gt: boolean;
}

export interface FilterInfo {
  fid: number;
  modality: string;
  index: number;
  source_image: string;
  marker_id: number;
  label: string;
}

export interface RegionScore {
  dice: number;
  best_filter_id: number;
  threshold: number;
}

export interface ScoreRow {
  image_id: string;
  aggregate: number;
  rank: number;
  regions: Record<string, RegionScore>;
}

export interface Ranking {
  rows: ScoreRow[];
  recommended: string | null;
  min_aggregate: number | null;
  stop_suggested: boolean;
}

export interface JobSnapshot {
  id: string;
  session_id: string;
  kind: string;
  state: "queued" | "running" | "done" | "failed";
  progress: number;
  result: unknown;
  error: string;
}

export interface MarkerEntry {
  coord: number[];
  marker_id: number;
  tag: "object" | "background";
}

export interface Metrics {
  image_ids: string[];
  per_region: Record<string, { mean: number; std: number; dice: number[] }>;
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function asJson<T>(res: Response): Promise<T> {
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = await res.json();
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      // non-JSON error body, keep the status text
    }
    throw new ApiError(res.status, detail);
  }
  return res.json() as Promise<T>;
}

export class ApiClient {
  constructor(private base: string = "") {}

  url(path: string): string {
    return this.base + path;
  }

  private get<T>(path: string): Promise<T> {
    return fetch(this.url(path)).then((r) => asJson<T>(r));
  }

  private send<T>(method: string, path: string, body?: unknown): Promise<T> {
    return fetch(this.url(path), {
      method,
      headers: { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    }).then((r) => asJson<T>(r));
  }

  health(): Promise<{ status: string }> {
    return this.get("/api/health");
  }

  createSession(opts: {
    manifest_path: string;
    budget?: number;
    seed?: number;
    stop_threshold?: number | null;
  }): Promise<{ id: string; budget: number; n_train: number }> {
    return this.send("POST", "/api/sessions", opts);
  }

  session(sid: string): Promise<SessionInfo> {
    return this.get(`/api/sessions/${sid}`);
  }

  images(sid: string): Promise<{ cases: CaseInfo[] }> {
    return this.get(`/api/sessions/${sid}/images`);
  }

  suggestFirst(sid: string): Promise<{ case_id: string }> {
    return this.get(`/api/sessions/${sid}/suggest-first`);
  }

  putMarkers(
    sid: string,
    caseId: string,
    entries: MarkerEntry[],
  ): Promise<{ case_id: string; n_entries: number; marker_ids: number[] }> {
    return this.send("PUT", `/api/sessions/${sid}/markers/${caseId}`, { entries });
  }

  filters(sid: string): Promise<{ filters: FilterInfo[] }> {
    return this.get(`/api/sessions/${sid}/filters`);
  }

  labelFilter(sid: string, fid: number, label: string): Promise<{ fid: number; label: string }> {
    return this.send("PUT", `/api/sessions/${sid}/filters/${fid}/label`, { label });
  }

  learn(sid: string): Promise<{ job: string; kind: string }> {
    return this.send("POST", `/api/sessions/${sid}/learn`);
  }

  score(sid: string): Promise<{ job: string; kind: string }> {
    return this.send("POST", `/api/sessions/${sid}/score`);
  }

  /** null means the ranking is empty (every training image selected). */
  async ranking(sid: string): Promise<Ranking | null> {
    const res = await fetch(this.url(`/api/sessions/${sid}/ranking`));
    if (res.status === 204) return null;
    return asJson<Ranking>(res);
  }

  select(
    sid: string,
    caseId: string,
  ): Promise<{ selected: string[]; was_recommended: boolean; overridden: boolean }> {
    return this.send("POST", `/api/sessions/${sid}/select`, { case_id: caseId });
  }

  trainEncoderRest(sid: string): Promise<{ job: string; kind: string }> {
    return this.send("POST", `/api/sessions/${sid}/train-encoder-rest`);
  }

  trainDecoder(
    sid: string,
    config: { epochs?: number; lr0?: number; seed?: number } = {},
  ): Promise<{ job: string; kind: string }> {
    return this.send("POST", `/api/sessions/${sid}/train-decoder`, config);
  }

  job(jobId: string): Promise<JobSnapshot> {
    return this.get(`/api/jobs/${jobId}`);
  }

  metrics(sid: string): Promise<Metrics> {
    return this.get(`/api/sessions/${sid}/metrics`);
  }

  checkpoint(sid: string, path?: string): Promise<{ path: string }> {
    return this.send("POST", `/api/sessions/${sid}/checkpoint`, path ? { path } : {});
  }
}
