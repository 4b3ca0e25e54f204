/** Workbench state assembled from API GETs.
 *
 * The client keeps no authoritative state of its own: after a reload,
 * loadWorkbenchState rebuilds everything shown on screen from the service.
 * Only strokes not yet saved are lost, by design.
 */
import { ApiClient, ApiError } from "./api.js";
import type { CaseInfo, FilterInfo, Metrics, Ranking, SessionInfo } from "./api.js";

export interface WorkbenchState {
  info: SessionInfo;
  cases: CaseInfo[];
  filters: FilterInfo[];
  ranking: Ranking | null;
  rankingBlocked: boolean;
  metrics: Metrics | null;
  currentCase: string | null;
}

/** Pick what the viewer should show first: the open recommendation, else
 * the last selected case, else ask the service for a starting image. */
export async function initialCase(api: ApiClient, info: SessionInfo): Promise<string | null> {
  if (info.recommended !== null && !info.stopped) return info.recommended;
  if (info.selected.length > 0) return info.selected[info.selected.length - 1];
  try {
    const res = await api.suggestFirst(info.id);
    return res.case_id;
  } catch (err) {
    if (err instanceof ApiError) return null;
    throw err;
  }
}

async function maybeRanking(api: ApiClient, sid: string): Promise<[Ranking | null, boolean]> {
  try {
    return [await api.ranking(sid), false];
  } catch (err) {
    // 409 before the first scoring pass or while stale: no table to show
    if (err instanceof ApiError && err.status === 409) return [null, true];
    throw err;
  }
}

async function maybeMetrics(api: ApiClient, sid: string, hasNet: boolean): Promise<Metrics | null> {
  if (!hasNet) return null;
  try {
    return await api.metrics(sid);
  } catch (err) {
    if (err instanceof ApiError && (err.status === 409 || err.status === 422)) return null;
    throw err;
  }
}

export async function loadWorkbenchState(api: ApiClient, sid: string): Promise<WorkbenchState> {
  const info = await api.session(sid);
  const [{ cases }, filters, [ranking, rankingBlocked], metrics] = await Promise.all([
    api.images(sid),
    info.n_filters > 0 ? api.filters(sid).then((r) => r.filters) : Promise.resolve([]),
    maybeRanking(api, sid),
    maybeMetrics(api, sid, info.has_net),
  ]);
  const currentCase = await initialCase(api, info);
  return { info, cases, filters, ranking, rankingBlocked, metrics, currentCase };
}
