/** Worst-first ranking table and selection budget readout.
 *
 * Every aggregate shown here is the server's number formatted to three
 * decimals; the UI does no scoring of its own.
 */
import type { Ranking, ScoreRow, SessionInfo } from "./api.js";

export function formatAggregate(value: number): string {
  return value.toFixed(3);
}

export function budgetLine(info: SessionInfo): string {
  return `${info.selected.length}/${info.budget} images selected`;
}

export function atBudget(info: SessionInfo): boolean {
  return info.selected.length >= info.budget;
}

function regionCells(row: ScoreRow): string {
  return ["ET", "TC", "WT"]
    .map((r) => {
      const score = row.regions[r];
      return score === undefined
        ? `<td class="region-cell">-</td>`
        : `<td class="region-cell">${formatAggregate(score.dice)}</td>`;
    })
    .join("");
}

export function renderRankingRow(row: ScoreRow, recommended: string | null, canSelect: boolean): string {
  const isRec = row.image_id === recommended;
  const cls = isRec ? "rank-row recommended" : "rank-row";
  const star = isRec ? " &#9733;" : "";
  const btn = canSelect
    ? `<button class="select-btn" data-case="${row.image_id}">select</button>`
    : `<button class="select-btn" data-case="${row.image_id}" disabled>select</button>`;
  return `<tr class="${cls}" data-case="${row.image_id}">
<td>${row.rank}</td>
<td class="case-cell">${row.image_id}${star}</td>
<td class="aggregate-cell">${formatAggregate(row.aggregate)}</td>
${regionCells(row)}
<td>${btn}</td>
</tr>`;
}

export function renderRanking(ranking: Ranking | null, info: SessionInfo): string {
  const budget = `<div class="budget">${budgetLine(info)}</div>`;
  if (ranking === null) {
    return `<div class="ranking">${budget}<div class="ranking-empty">every training image is selected</div></div>`;
  }
  const canSelect = !atBudget(info);
  const stop = ranking.stop_suggested
    ? `<div class="stop-note">worst score cleared the stop threshold; more images may not help</div>`
    : "";
  const rows = ranking.rows
    .map((row) => renderRankingRow(row, ranking.recommended, canSelect))
    .join("\n");
  return `<div class="ranking">
${budget}${stop}
<table class="ranking-table">
<thead><tr><th>rank</th><th>image</th><th>aggregate</th><th>ET</th><th>TC</th><th>WT</th><th></th></tr></thead>
<tbody>${rows}</tbody>
</table>
</div>`;
}
