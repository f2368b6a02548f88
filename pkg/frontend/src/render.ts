import { diffWords } from "./diff";
import type { HistoryEntry } from "./session";

/**
 * DOM builders. All numbers shown come verbatim from the service response;
 * the workbench never reorders or rescales results.
 */

export function formatScore(score: number): string {
  return score.toFixed(4);
}

export interface GridOptions {
  truthId?: string;
  onTileClick?: (id: string) => void;
}

export function renderResultsGrid(entry: HistoryEntry, opts: GridOptions = {}): HTMLElement {
  const grid = document.createElement("div");
  grid.className = "results-grid";
  grid.dataset.seq = String(entry.seq);
  if (entry.status !== "ok" || !entry.response) {
    grid.classList.add("empty");
    grid.textContent = entry.status === "failed" ? `failed: ${entry.error ?? ""}` : entry.status;
    return grid;
  }
  entry.response.results.forEach((result, i) => {
    const tile = document.createElement("div");
    tile.className = "tile";
    tile.dataset.id = result.id;
    tile.dataset.rank = String(i + 1);
    if (opts.truthId !== undefined && result.id === opts.truthId) {
      tile.classList.add("truth"); // green outline marks the known positive
    }
    const rank = document.createElement("span");
    rank.className = "rank";
    rank.textContent = `#${i + 1}`;
    const score = document.createElement("span");
    score.className = "score";
    score.textContent = formatScore(result.score);
    const snippet = document.createElement("span");
    snippet.className = "snippet";
    snippet.textContent = result.text_snippet;
    const preview = document.createElement("div");
    preview.className = "preview";
    preview.title = "click to orbit";
    tile.append(rank, preview, score, snippet);
    if (opts.onTileClick) {
      tile.addEventListener("click", () => opts.onTileClick!(result.id));
    }
    grid.appendChild(tile);
  });
  return grid;
}

export function renderQueryLine(text: string, changed: Set<number>): HTMLElement {
  const line = document.createElement("p");
  line.className = "query-line";
  text
    .split(/\s+/)
    .filter((w) => w.length > 0)
    .forEach((word, idx) => {
      if (idx > 0) line.appendChild(document.createTextNode(" "));
      if (changed.has(idx)) {
        const mark = document.createElement("mark");
        mark.textContent = word;
        line.appendChild(mark);
      } else {
        line.appendChild(document.createTextNode(word));
      }
    });
  return line;
}

export function renderComparePanel(a: HistoryEntry, b: HistoryEntry, opts: GridOptions = {}): HTMLElement {
  const panel = document.createElement("div");
  panel.className = "compare-panel";
  const diff = diffWords(a.text, b.text);
  for (const [entry, changed] of [
    [a, diff.aChanged],
    [b, diff.bChanged],
  ] as const) {
    const row = document.createElement("div");
    row.className = "compare-row";
    row.appendChild(renderQueryLine(entry.text, changed));
    row.appendChild(renderResultsGrid(entry, opts));
    panel.appendChild(row);
  }
  return panel;
}

export function renderBanner(message: string, onRetry?: () => void): HTMLElement {
  const banner = document.createElement("div");
  banner.className = "banner";
  banner.setAttribute("role", "alert");
  const text = document.createElement("span");
  text.textContent = message;
  banner.appendChild(text);
  if (onRetry) {
    const retry = document.createElement("button");
    retry.className = "retry";
    retry.textContent = "retry";
    retry.addEventListener("click", () => {
      banner.remove();
      onRetry();
    });
    banner.appendChild(retry);
  }
  const close = document.createElement("button");
  close.className = "close";
  close.textContent = "×";
  close.addEventListener("click", () => banner.remove());
  banner.appendChild(close);
  return banner;
}
