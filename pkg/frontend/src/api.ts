/**
 * api.ts — typed client for the slp labeling service.
 *
 * Every call maps 1:1 onto a JSON route; no state is kept here. Error
 * responses carry a top-level {code, message} body which is surfaced as an
 * ApiError so callers can roll back optimistic updates.
 */

export type Verdict = "in" | "out" | "abstain";
export type SessionMode = "slp" | "label_only";
export type TrainMode = "strong" | "weak";

export interface Counters {
  queries: number;
  strong_labels: number;
  weak_labels: number;
}

export interface DisplayedCandidate {
  candidate_id: number;
  text: string;
  score: number;
  rank: number;
}

export interface QueryResponse {
  query_id: number;
  displayed: DisplayedCandidate[];
  total_matches: number;
  neighborhood_size: number;
  version: number;
}

export interface VerdictResponse {
  recorded: boolean;
  version: number;
  counters: Counters;
}

export interface RoundSummary {
  query_id: number;
  q: string;
  displayed: number[];
  total_matches: number;
  neighborhood_size: number;
  verdicts: { in: number; out: number; abstain: number };
  propagation?: "propagate_in" | "propagate_out" | "none";
  n_covered?: number;
}

// accuracy, precision(+/-), recall(+/-); null when the denominator was zero
export interface MetricsPayload {
  accuracy: number | null;
  precision_pos: number | null;
  precision_neg: number | null;
  recall_pos: number | null;
  recall_neg: number | null;
  support_pos?: number;
  support_neg?: number;
}

export interface SessionSnapshot {
  session_id: string;
  corpus_id: string;
  intent: string;
  mode: SessionMode;
  state: "open" | "finalized" | "trained";
  version: number;
  counters: Counters;
  config: Record<string, unknown>;
  rounds: RoundSummary[];
  n_functions: number;
  metrics: Partial<Record<TrainMode, MetricsPayload | null>>;
}

export interface FinalizeResponse {
  session_id: string;
  state: string;
  n_functions: number;
  n_strong: number;
  n_weak: number;
  version: number;
}

export interface TrainResponse {
  session_id: string;
  state: string;
  mode: TrainMode;
  n_training_rows: number;
  metrics: MetricsPayload | null;
  version: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export class Api {
  constructor(readonly baseUrl: string) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await fetch(this.baseUrl + path, {
      method,
      headers: body === undefined ? undefined : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) {
      let code = "error";
      let message = `${resp.status} ${resp.statusText}`;
      try {
        const data = (await resp.json()) as { code?: string; message?: string };
        if (data.code) code = data.code;
        if (data.message) message = data.message;
      } catch {
        // non-JSON error body; keep the status line
      }
      throw new ApiError(resp.status, code, message);
    }
    return (await resp.json()) as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("GET", "/healthz");
  }

  createCorpus(body: {
    corpus_id?: string;
    utterances?: string[];
    data?: string;
    format?: "ndjson" | "text";
    test_csv?: string;
  }): Promise<{ corpus_id: string; n_utterances: number }> {
    return this.request("POST", "/corpora", { v: 1, ...body });
  }

  indexCorpus(corpusId: string): Promise<{ n_documents: number; cached: boolean }> {
    return this.request("POST", `/corpora/${encodeURIComponent(corpusId)}/index`);
  }

  createSession(body: {
    corpus_id: string;
    intent: string;
    config?: Record<string, unknown>;
  }): Promise<{ session_id: string; mode: SessionMode; version: number }> {
    return this.request("POST", "/sessions", { v: 1, config: {}, ...body });
  }

  getSession(sessionId: string): Promise<SessionSnapshot> {
    return this.request("GET", `/sessions/${encodeURIComponent(sessionId)}`);
  }

  runQuery(sessionId: string, q: string): Promise<QueryResponse> {
    return this.request("POST", `/sessions/${encodeURIComponent(sessionId)}/queries`, {
      v: 1,
      q,
    });
  }

  postVerdict(
    sessionId: string,
    queryId: number,
    candidateId: number,
    verdict: Verdict,
  ): Promise<VerdictResponse> {
    return this.request("POST", `/sessions/${encodeURIComponent(sessionId)}/verdicts`, {
      v: 1,
      query_id: queryId,
      candidate_id: candidateId,
      verdict,
    });
  }

  finalize(sessionId: string): Promise<FinalizeResponse> {
    return this.request("POST", `/sessions/${encodeURIComponent(sessionId)}/finalize`);
  }

  train(sessionId: string, mode: TrainMode, decisionThreshold = 0.5): Promise<TrainResponse> {
    return this.request("POST", `/sessions/${encodeURIComponent(sessionId)}/train`, {
      v: 1,
      mode,
      decision_threshold: decisionThreshold,
    });
  }

  async exportText(sessionId: string, what: "script" | "marginals" | "labels"): Promise<string> {
    const resp = await fetch(
      `${this.baseUrl}/sessions/${encodeURIComponent(sessionId)}/export?what=${what}`,
    );
    if (!resp.ok) {
      const data = (await resp.json()) as { code?: string; message?: string };
      throw new ApiError(resp.status, data.code ?? "error", data.message ?? "export failed");
    }
    return resp.text();
  }
}

/** Pull the probability column out of a marginals CSV export. */
export function parseMarginalsCsv(text: string): number[] {
  const lines = text.split("\n");
  if (lines[0]?.trim() !== "utterance_id,p,source") {
    throw new Error("unexpected marginals export header");
  }
  const values: number[] = [];
  for (const line of lines.slice(1)) {
    if (!line.trim()) continue;
    const parts = line.split(",");
    const p = Number(parts[1]);
    if (parts.length !== 3 || !Number.isFinite(p)) {
      throw new Error(`bad marginals row: ${line}`);
    }
    values.push(p);
  }
  return values;
}
