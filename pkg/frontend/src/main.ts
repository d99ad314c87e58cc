/**
 * main.ts — wires the store, the API client, and the views together.
 *
 * One session per tab. Mutations go through a queue so they reach the server
 * in click order; every response (or a follow-up GET) refreshes the store, so
 * the rendered counters are always the server's.
 */

import { Api, ApiError, parseMarginalsCsv } from "./api.js";
import type { SessionMode, TrainMode, Verdict } from "./api.js";
import { bindShortcuts } from "./keyboard.js";
import {
  MutationQueue,
  Store,
  applyQueryResponse,
  applyVerdictOptimistic,
  applyVerdictResponse,
  rebuildFromSnapshot,
  rollbackVerdict,
} from "./state.js";
import {
  renderCards,
  renderError,
  renderHistogram,
  renderHistory,
  renderSearchBar,
  renderStatusBar,
  renderTrainPanel,
} from "./views.js";
import type { Handlers } from "./views.js";

// the only configuration: ?api=<base url>, default local service
export function apiBaseUrl(search = location.search): string {
  return new URLSearchParams(search).get("api") ?? "http://127.0.0.1:8765";
}

export class App {
  readonly store = new Store();
  private queue = new MutationQueue();
  private regions!: Record<
    "status" | "error" | "setup" | "search" | "cards" | "history" | "train" | "histogram",
    HTMLElement
  >;
  private handlers: Handlers = {
    onSearch: (q) => this.runQuery(q),
    onVerdict: (candidateId, verdict) => this.verdict(candidateId, verdict),
    onRerun: (q) => this.runQuery(q),
    onFinalize: () => this.finalize(),
    onTrain: (mode) => this.train(mode),
  };

  constructor(
    private root: HTMLElement,
    private api: Api,
  ) {
    this.buildSkeleton();
    this.store.subscribe(() => this.render());
    bindShortcuts(document, {
      onVerdictKey: (verdict) => {
        const card = this.store.state.cards[this.store.state.selected];
        if (card && this.store.state.phase === "open") {
          this.verdict(card.candidate_id, verdict);
        }
      },
      onMoveSelection: (delta) => this.moveSelection(delta),
      onFocusSearch: () => {
        this.regions.search.querySelector("input")?.focus();
      },
    });
    this.render();
  }

  private buildSkeleton(): void {
    this.root.replaceChildren();
    const make = (tag: string, id: string, parent: HTMLElement): HTMLElement => {
      const node = document.createElement(tag);
      node.id = id;
      parent.append(node);
      return node;
    };
    const status = make("header", "status", this.root);
    const error = make("div", "error-strip", this.root);
    const setup = make("section", "setup", this.root);
    const grid = make("div", "grid", this.root);
    const left = make("div", "left", grid);
    const right = make("aside", "right", grid);
    this.regions = {
      status,
      error,
      setup,
      search: make("section", "search", left),
      cards: make("section", "cards", left),
      history: make("section", "history-panel", right),
      train: make("section", "train-panel", right),
      histogram: make("section", "histogram-panel", right),
    };
    this.buildSetupForm();
  }

  private buildSetupForm(): void {
    const form = document.createElement("form");
    form.className = "setup-form";
    form.innerHTML = `
      <input name="corpus" placeholder="corpus id" required>
      <input name="intent" placeholder="intent" required>
      <select name="mode">
        <option value="slp">slp</option>
        <option value="label_only">label_only</option>
      </select>
      <button type="submit">Start session</button>
      <input name="resume" placeholder="or session id">
      <button type="button" name="resume-btn">Resume</button>
    `;
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      const data = new FormData(form);
      void this.startSession(
        String(data.get("corpus")),
        String(data.get("intent")),
        String(data.get("mode")) as SessionMode,
      );
    });
    form.querySelector<HTMLButtonElement>('[name="resume-btn"]')!.addEventListener("click", () => {
      const sid = form.querySelector<HTMLInputElement>('[name="resume"]')!.value.trim();
      if (sid) void this.resume(sid);
    });
    this.regions.setup.append(form);
  }

  render(): void {
    const state = this.store.state;
    renderStatusBar(this.regions.status, state);
    renderError(this.regions.error, state);
    this.regions.setup.hidden = state.sessionId !== null;
    this.regions.search.hidden = state.sessionId === null;
    renderSearchBar(this.regions.search, state, this.handlers);
    renderCards(this.regions.cards, state, this.handlers);
    renderHistory(this.regions.history, state, this.handlers);
    if (state.sessionId) {
      renderTrainPanel(this.regions.train, state, this.handlers);
    } else {
      this.regions.train.replaceChildren();
    }
    renderHistogram(this.regions.histogram, state);
  }

  private fail(err: unknown): void {
    const message =
      err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
    this.store.update((s) => ({ ...s, error: message, busy: false }));
  }

  async startSession(corpusId: string, intent: string, mode: SessionMode): Promise<void> {
    try {
      const created = await this.api.createSession({
        corpus_id: corpusId,
        intent,
        config: mode === "slp" ? {} : { mode },
      });
      location.hash = `s=${created.session_id}`;
      await this.resume(created.session_id);
    } catch (err) {
      this.fail(err);
    }
  }

  /** Rebuild everything the UI shows from the server's session snapshot. */
  async resume(sessionId: string): Promise<void> {
    try {
      const snapshot = await this.api.getSession(sessionId);
      let state = rebuildFromSnapshot(snapshot);
      if (snapshot.mode === "slp" && snapshot.state !== "open") {
        const csv = await this.api.exportText(sessionId, "marginals");
        state = { ...state, marginals: parseMarginalsCsv(csv) };
      }
      this.store.set(state);
    } catch (err) {
      this.fail(err);
    }
  }

  runQuery(q: string): Promise<void> {
    return this.queue.enqueue(async () => {
      const sid = this.store.state.sessionId;
      if (!sid) return;
      try {
        const resp = await this.api.runQuery(sid, q);
        this.store.update((s) => applyQueryResponse(s, q, resp));
      } catch (err) {
        this.fail(err);
      }
    });
  }

  verdict(candidateId: number, verdict: Verdict): Promise<void> {
    const sid = this.store.state.sessionId;
    const queryId = this.store.state.activeQueryId;
    if (!sid || queryId === null) return Promise.resolve();
    this.store.update((s) => applyVerdictOptimistic(s, candidateId, verdict));
    return this.queue.enqueue(async () => {
      try {
        const resp = await this.api.postVerdict(sid, queryId, candidateId, verdict);
        this.store.update((s) => {
          const next = applyVerdictResponse(s, candidateId, verdict, resp);
          return { ...next, error: null };
        });
        this.moveSelection(1);
      } catch (err) {
        this.store.update((s) => rollbackVerdict(s, candidateId));
        this.fail(err);
      }
    });
  }

  finalize(): Promise<void> {
    const sid = this.store.state.sessionId;
    if (!sid) return Promise.resolve();
    this.store.update((s) => ({ ...s, busy: true }));
    return this.queue.enqueue(async () => {
      try {
        await this.api.finalize(sid);
        await this.resume(sid); // propagation badges and counters from the server
      } catch (err) {
        this.fail(err);
      }
    });
  }

  train(mode: TrainMode): Promise<void> {
    const sid = this.store.state.sessionId;
    if (!sid) return Promise.resolve();
    this.store.update((s) => ({ ...s, busy: true }));
    return this.queue.enqueue(async () => {
      try {
        await this.api.train(sid, mode);
        await this.resume(sid);
      } catch (err) {
        this.fail(err);
      }
    });
  }

  private moveSelection(delta: 1 | -1): void {
    this.store.update((s) => {
      if (!s.cards.length) return s;
      const selected = Math.min(s.cards.length - 1, Math.max(0, s.selected + delta));
      return { ...s, selected };
    });
  }
}

function boot(): void {
  const root = document.getElementById("app");
  if (!root) return;
  const app = new App(root, new Api(apiBaseUrl()));
  const match = location.hash.match(/s=([\w-]+)/);
  if (match) void app.resume(match[1]);
}

// importable from tests without side effects
if (typeof document !== "undefined" && document.getElementById("app")) {
  boot();
}
