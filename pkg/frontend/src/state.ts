/**
 * state.ts — single UI store, rebuilt from the server on demand.
 *
 * The server is the source of truth: counters, propagation outcomes, and
 * metrics always come from responses, never from local computation. The only
 * speculative piece is the per-card verdict highlight, which is applied
 * optimistically and rolled back if the POST fails.
 */

import type {
  Counters,
  DisplayedCandidate,
  MetricsPayload,
  QueryResponse,
  SessionMode,
  SessionSnapshot,
  TrainMode,
  Verdict,
  VerdictResponse,
} from "./api.js";

export type Tier = "top" | "middle" | "bottom";

export interface CardState extends DisplayedCandidate {
  tier: Tier;
  verdict: Verdict | null; // last server-confirmed verdict
  pending: Verdict | null; // in-flight optimistic verdict
}

export interface HistoryEntry {
  queryId: number;
  q: string;
  verdicts: { in: number; out: number; abstain: number };
  propagation: "propagate_in" | "propagate_out" | "none" | null;
  nCovered: number;
  totalMatches: number;
  neighborhoodSize: number;
}

export interface UiState {
  sessionId: string | null;
  intent: string;
  mode: SessionMode;
  phase: "open" | "finalized" | "trained";
  version: number;
  counters: Counters;
  history: HistoryEntry[];
  cards: CardState[];
  activeQueryId: number | null;
  selected: number; // index into cards for keyboard navigation
  nFunctions: number;
  metrics: Partial<Record<TrainMode, MetricsPayload | null>>;
  marginals: number[] | null;
  error: string | null;
  busy: boolean;
}

export function emptyState(): UiState {
  return {
    sessionId: null,
    intent: "",
    mode: "slp",
    phase: "open",
    version: 0,
    counters: { queries: 0, strong_labels: 0, weak_labels: 0 },
    history: [],
    cards: [],
    activeQueryId: null,
    selected: 0,
    nFunctions: 0,
    metrics: {},
    marginals: null,
    error: null,
    busy: false,
  };
}

// Mirrors the server's tier split: thirds, remainder assigned top-first.
export function tierSizes(total: number): [number, number, number] {
  const base = Math.floor(total / 3);
  const remainder = total % 3;
  return [base + (remainder >= 1 ? 1 : 0), base + (remainder >= 2 ? 1 : 0), base];
}

export function tierOf(rank: number, neighborhoodSize: number): Tier {
  const [top, middle] = tierSizes(neighborhoodSize);
  if (rank < top) return "top";
  if (rank < top + middle) return "middle";
  return "bottom";
}

/** Everything the server knows about a session, reshaped for rendering. */
export function rebuildFromSnapshot(snapshot: SessionSnapshot): UiState {
  const state = emptyState();
  state.sessionId = snapshot.session_id;
  state.intent = snapshot.intent;
  state.mode = snapshot.mode;
  state.phase = snapshot.state;
  state.version = snapshot.version;
  state.counters = snapshot.counters;
  state.nFunctions = snapshot.n_functions;
  state.metrics = snapshot.metrics ?? {};
  state.history = snapshot.rounds.map((round) => ({
    queryId: round.query_id,
    q: round.q,
    verdicts: round.verdicts,
    propagation: round.propagation ?? null,
    nCovered: round.n_covered ?? 0,
    totalMatches: round.total_matches,
    neighborhoodSize: round.neighborhood_size,
  }));
  // candidate texts are not part of the snapshot; the history re-run
  // affordance brings cards back after a refresh
  return state;
}

export function applyQueryResponse(
  state: UiState,
  q: string,
  resp: QueryResponse,
): UiState {
  const cards = resp.displayed.map((c) => ({
    ...c,
    tier: tierOf(c.rank, resp.neighborhood_size),
    verdict: null,
    pending: null,
  }));
  return {
    ...state,
    version: resp.version,
    counters: { ...state.counters, queries: state.counters.queries + 1 },
    history: [
      ...state.history,
      {
        queryId: resp.query_id,
        q,
        verdicts: { in: 0, out: 0, abstain: 0 },
        propagation: null,
        nCovered: 0,
        totalMatches: resp.total_matches,
        neighborhoodSize: resp.neighborhood_size,
      },
    ],
    cards,
    activeQueryId: resp.query_id,
    selected: 0,
    error: null,
  };
}

function patchCard(
  state: UiState,
  candidateId: number,
  patch: Partial<CardState>,
): UiState {
  return {
    ...state,
    cards: state.cards.map((card) =>
      card.candidate_id === candidateId ? { ...card, ...patch } : card,
    ),
  };
}

/** Show the verdict immediately; the server response or rollback follows. */
export function applyVerdictOptimistic(
  state: UiState,
  candidateId: number,
  verdict: Verdict,
): UiState {
  return patchCard(state, candidateId, { pending: verdict });
}

export function applyVerdictResponse(
  state: UiState,
  candidateId: number,
  verdict: Verdict,
  resp: VerdictResponse,
): UiState {
  const next = patchCard(state, candidateId, { verdict, pending: null });
  next.version = resp.version;
  next.counters = resp.counters; // authoritative
  if (next.activeQueryId !== null) {
    next.history = next.history.map((entry) =>
      entry.queryId === next.activeQueryId
        ? { ...entry, verdicts: tallyVerdicts(next.cards) }
        : entry,
    );
  }
  return next;
}

export function rollbackVerdict(state: UiState, candidateId: number): UiState {
  return patchCard(state, candidateId, { pending: null });
}

function tallyVerdicts(cards: CardState[]): { in: number; out: number; abstain: number } {
  const tally = { in: 0, out: 0, abstain: 0 };
  for (const card of cards) {
    if (card.verdict) tally[card.verdict] += 1;
  }
  return tally;
}

export interface Listener {
  (state: UiState): void;
}

export class Store {
  private listeners: Listener[] = [];

  constructor(public state: UiState = emptyState()) {}

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  set(state: UiState): void {
    this.state = state;
    for (const listener of this.listeners) listener(state);
  }

  update(fn: (state: UiState) => UiState): void {
    this.set(fn(this.state));
  }
}

/**
 * Serializes mutations so verdicts and queries reach the server in click
 * order; one failed task does not wedge the queue.
 */
export class MutationQueue {
  private chain: Promise<unknown> = Promise.resolve();

  enqueue<T>(task: () => Promise<T>): Promise<T> {
    const next = this.chain.then(task, task);
    this.chain = next.catch(() => undefined);
    return next;
  }
}
