/**
 * views.ts — DOM rendering, no framework.
 *
 * Each render function replaces the children of its container from the
 * current UiState. All user text goes through textContent, never innerHTML.
 */

import type { MetricsPayload, TrainMode, Verdict } from "./api.js";
import type { CardState, HistoryEntry, UiState } from "./state.js";

export const METRIC_COLUMNS = [
  "accuracy",
  "precision_pos",
  "precision_neg",
  "recall_pos",
  "recall_neg",
] as const;

export const METRIC_HEADERS: Record<(typeof METRIC_COLUMNS)[number], string> = {
  accuracy: "accuracy",
  precision_pos: "precision(+)",
  precision_neg: "precision(-)",
  recall_pos: "recall(+)",
  recall_neg: "recall(-)",
};

export interface Handlers {
  onSearch(q: string): void;
  onVerdict(candidateId: number, verdict: Verdict): void;
  onRerun(q: string): void;
  onFinalize(): void;
  onTrain(mode: TrainMode): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function fmtMetric(value: number | null | undefined): string {
  return value === null || value === undefined ? "-" : value.toFixed(3);
}

export function badgeText(entry: HistoryEntry): string {
  switch (entry.propagation) {
    case "propagate_in":
      return `propagated In (${entry.nCovered})`;
    case "propagate_out":
      return `propagated Out (${entry.nCovered})`;
    case "none":
      return "no propagation";
    default:
      return "open";
  }
}

export function renderSearchBar(container: HTMLElement, state: UiState, handlers: Handlers): void {
  container.replaceChildren();
  const form = el("form", "search-bar");
  const input = el("input");
  input.type = "search";
  input.name = "q";
  input.placeholder = 'query, e.g. refund OR "money back"';
  input.disabled = state.phase !== "open";
  const button = el("button", "", "Search");
  button.type = "submit";
  button.disabled = state.phase !== "open";
  form.append(input, button);
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const q = input.value.trim();
    if (q) handlers.onSearch(q);
  });
  container.append(form);
}

function verdictButton(
  card: CardState,
  verdict: Verdict,
  label: string,
  handlers: Handlers,
  disabled: boolean,
): HTMLButtonElement {
  const button = el("button", `verdict-${verdict}`, label);
  const active = (card.pending ?? card.verdict) === verdict;
  if (active) button.classList.add("active");
  button.disabled = disabled;
  button.addEventListener("click", () => handlers.onVerdict(card.candidate_id, verdict));
  return button;
}

export function renderCards(container: HTMLElement, state: UiState, handlers: Handlers): void {
  container.replaceChildren();
  if (!state.cards.length) {
    const hint =
      state.history.length && state.phase === "open"
        ? "re-run a query from the history to bring candidates back"
        : "run a query to see candidates";
    container.append(el("p", "hint", hint));
    return;
  }
  const closed = state.phase !== "open";
  state.cards.forEach((card, i) => {
    const div = el("article", "card");
    div.dataset.candidateId = String(card.candidate_id);
    if (i === state.selected) div.classList.add("selected");
    if (card.pending) div.classList.add("pending");
    const meta = el("div", "card-meta");
    meta.append(
      el("span", `tier tier-${card.tier}`, card.tier),
      el("span", "score", card.score.toFixed(3)),
    );
    div.append(meta, el("p", "card-text", card.text));
    const buttons = el("div", "card-buttons");
    buttons.append(
      verdictButton(card, "in", "In", handlers, closed),
      verdictButton(card, "out", "Out", handlers, closed),
      verdictButton(card, "abstain", "Skip", handlers, closed),
    );
    div.append(buttons);
    container.append(div);
  });
}

export function renderHistory(container: HTMLElement, state: UiState, handlers: Handlers): void {
  container.replaceChildren();
  container.append(el("h2", "", "Queries"));
  if (!state.history.length) {
    container.append(el("p", "hint", "no queries yet"));
    return;
  }
  const list = el("ul", "history");
  for (const entry of [...state.history].reverse()) {
    const item = el("li", "history-entry");
    const head = el("div", "history-head");
    head.append(
      el("code", "", entry.q),
      el("span", `badge badge-${entry.propagation ?? "open"}`, badgeText(entry)),
    );
    item.append(head);
    item.append(
      el(
        "div",
        "history-counts",
        `${entry.totalMatches} matches · in ${entry.verdicts.in} / out ${entry.verdicts.out} / skip ${entry.verdicts.abstain}`,
      ),
    );
    if (state.phase === "open") {
      const rerun = el("button", "rerun", "re-run");
      rerun.addEventListener("click", () => handlers.onRerun(entry.q));
      item.append(rerun);
    }
    list.append(item);
  }
  container.append(list);
}

export function renderMetricsTable(
  container: HTMLElement,
  metrics: Partial<Record<TrainMode, MetricsPayload | null>>,
): void {
  const table = el("table", "metrics");
  const head = el("tr");
  head.append(el("th", "", "model"));
  for (const column of METRIC_COLUMNS) head.append(el("th", "", METRIC_HEADERS[column]));
  table.append(head);
  for (const mode of ["strong", "weak"] as const) {
    if (!(mode in metrics)) continue;
    const row = el("tr");
    row.append(el("td", "", mode));
    const payload = metrics[mode];
    for (const column of METRIC_COLUMNS) {
      row.append(el("td", "", fmtMetric(payload ? payload[column] : null)));
    }
    table.append(row);
  }
  container.append(table);
}

export function renderTrainPanel(container: HTMLElement, state: UiState, handlers: Handlers): void {
  container.replaceChildren();
  container.append(el("h2", "", "Train"));
  const counts = el("div", "label-counts");
  counts.append(
    el("span", "count-strong", `${state.counters.strong_labels} strong labels`),
    el("span", "count-weak", `${state.counters.weak_labels} weak labels`),
  );
  container.append(counts);

  const actions = el("div", "train-actions");
  if (state.phase === "open") {
    const finalize = el("button", "finalize", "Finalize session");
    finalize.disabled = state.busy || state.counters.strong_labels === 0;
    finalize.addEventListener("click", () => handlers.onFinalize());
    actions.append(finalize);
  } else {
    const strong = el("button", "train-strong", "Train strong");
    strong.disabled = state.busy;
    strong.addEventListener("click", () => handlers.onTrain("strong"));
    actions.append(strong);
    if (state.mode === "slp") {
      const weak = el("button", "train-weak", "Train weak");
      weak.disabled = state.busy;
      weak.addEventListener("click", () => handlers.onTrain("weak"));
      actions.append(weak);
    }
  }
  container.append(actions);

  if (Object.keys(state.metrics).length) renderMetricsTable(container, state.metrics);
}

/** Fixed-width bins over [0, 1]; p = 1.0 lands in the last bin. */
export function binMarginals(values: number[], nBins = 10): number[] {
  const bins = new Array<number>(nBins).fill(0);
  for (const p of values) {
    const index = Math.min(nBins - 1, Math.max(0, Math.floor(p * nBins)));
    bins[index] += 1;
  }
  return bins;
}

export function renderHistogram(container: HTMLElement, state: UiState): void {
  container.replaceChildren();
  if (state.marginals === null) return;
  container.append(el("h2", "", "Marginal probabilities"));
  const bins = binMarginals(state.marginals);
  const peak = Math.max(1, ...bins);
  const chart = el("div", "histogram");
  bins.forEach((count, i) => {
    const bar = el("div", "bar");
    bar.style.height = `${Math.round((100 * count) / peak)}%`;
    bar.title = `${(i / bins.length).toFixed(1)}-${((i + 1) / bins.length).toFixed(1)}: ${count}`;
    bar.dataset.count = String(count);
    chart.append(bar);
  });
  container.append(chart);
}

export function renderStatusBar(container: HTMLElement, state: UiState): void {
  container.replaceChildren();
  const counters = state.counters;
  container.append(
    el("span", "", state.sessionId ? `session ${state.sessionId}` : "no session"),
    el("span", "", `intent: ${state.intent || "-"}`),
    el("span", "", `mode: ${state.mode}`),
    el("span", "phase", state.phase),
    el(
      "span",
      "counters",
      `${counters.queries} queries · ${counters.strong_labels} strong · ${counters.weak_labels} weak`,
    ),
  );
}

export function renderError(container: HTMLElement, state: UiState): void {
  container.replaceChildren();
  if (!state.error) return;
  container.append(el("div", "error", state.error));
}
