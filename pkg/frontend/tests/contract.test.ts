/**
 * End-to-end contract test against a real service process: one query, ten
 * verdicts, finalize, train. After every mutation the store's counters must
 * equal GET /sessions/{id}, and the metrics panel must show the five
 * evaluation columns.
 */

import { type ChildProcess, spawn } from "node:child_process";
import { afterAll, beforeAll, expect, it } from "vitest";

import { Api } from "../src/api.js";
import { App } from "../src/main.js";

const PORT = 18000 + (process.pid % 1000);
const BASE = `http://127.0.0.1:${PORT}`;

const DOCS = [
  ...Array.from({ length: 15 }, (_, i) => `i want a refund for order ${1000 + i} please`),
  ...["lamp", "kettle", "charger"].flatMap((obj) =>
    ["monday", "tuesday", "wednesday", "thursday", "friday"].map(
      (day) => `refund the ${obj} i bought on ${day} the refund is overdue`,
    ),
  ),
  ...Array.from({ length: 15 }, (_, i) => `what a lovely day outside today number ${i}`),
];

const TEST_CSV = [
  "text,intent,label",
  "please refund my order now,refund,pos",
  "refund me for the broken lamp,refund,pos",
  "i need a refund asap,refund,pos",
  "what a lovely day outside,refund,neg",
  "where is my package,refund,neg",
  "see you at lunch tomorrow,refund,neg",
].join("\n");

let server: ChildProcess;
let stderr = "";
let api: Api;
let app: App;

async function countersMatchServer(): Promise<void> {
  const sessionId = app.store.state.sessionId;
  expect(sessionId).not.toBeNull();
  const snapshot = await api.getSession(sessionId!);
  expect(app.store.state.counters).toEqual(snapshot.counters);
  expect(app.store.state.version).toBe(snapshot.version);
}

beforeAll(async () => {
  server = spawn("slp", ["serve", "--addr", `127.0.0.1:${PORT}`], {
    stdio: ["ignore", "ignore", "pipe"],
  });
  server.stderr?.on("data", (chunk: Buffer) => {
    stderr += chunk.toString();
  });
  api = new Api(BASE);
  const deadline = Date.now() + 30000;
  for (;;) {
    try {
      await api.health();
      break;
    } catch {
      if (Date.now() > deadline) {
        throw new Error(`service did not come up on ${BASE}\n${stderr}`);
      }
      await new Promise((resolve) => setTimeout(resolve, 200));
    }
  }
  const root = document.createElement("div");
  root.id = "app";
  document.body.append(root);
  app = new App(root, api);
}, 40000);

afterAll(() => {
  server?.kill("SIGTERM");
});

it("creates and indexes the corpus", async () => {
  const created = await api.createCorpus({
    corpus_id: "demo",
    utterances: DOCS,
    test_csv: TEST_CSV,
  });
  expect(created.n_utterances).toBe(DOCS.length);
  const indexed = await api.indexCorpus("demo");
  expect(indexed.n_documents).toBe(DOCS.length);
});

it("starts a session and matches server counters", async () => {
  await app.startSession("demo", "refund", "slp");
  expect(app.store.state.sessionId).toMatch(/^s/);
  expect(app.store.state.phase).toBe("open");
  await countersMatchServer();
});

it("runs one query and displays exactly k cards", async () => {
  await app.runQuery("refund");
  expect(app.store.state.cards).toHaveLength(10); // display_size default
  expect(app.store.state.history).toHaveLength(1);
  expect(app.store.state.error).toBeNull();
  await countersMatchServer();
});

it("posts ten verdicts, counters matching the server after each", async () => {
  const cards = [...app.store.state.cards];
  expect(cards).toHaveLength(10);
  for (const [i, card] of cards.entries()) {
    // 8 In, 1 Out, 1 Skip: enough for the 0.6 propagation threshold
    const verdict = i < 8 ? "in" : i === 8 ? "out" : "abstain";
    await app.verdict(card.candidate_id, verdict);
    expect(app.store.state.error).toBeNull();
    await countersMatchServer();
  }
  expect(app.store.state.counters.strong_labels).toBe(9); // skip is not a strong label
  const entry = app.store.state.history[0];
  expect(entry.verdicts).toEqual({ in: 8, out: 1, abstain: 1 });
});

it("surfaces a server rejection inline and leaves counters untouched", async () => {
  const before = app.store.state.counters;
  await app.verdict(999999, "in"); // not in the displayed sample
  expect(app.store.state.error).not.toBeNull();
  expect(app.store.state.counters).toEqual(before);
  expect(app.store.state.cards.every((c) => c.pending === null)).toBe(true);
  await countersMatchServer();
  app.store.update((s) => ({ ...s, error: null }));
});

it("finalizes: propagation badge, weak counter, and histogram appear", async () => {
  await app.finalize();
  expect(app.store.state.error).toBeNull();
  expect(app.store.state.phase).toBe("finalized");
  expect(app.store.state.history[0].propagation).toBe("propagate_in");
  expect(app.store.state.counters.weak_labels).toBeGreaterThan(0);
  expect(app.store.state.marginals).not.toBeNull();
  expect(app.store.state.marginals!.length).toBeGreaterThan(0);
  await countersMatchServer();
  const bars = document.querySelectorAll("#histogram-panel .bar");
  expect(bars.length).toBe(10);
});

it("trains weak and strong; the metrics panel shows the five columns", async () => {
  await app.train("weak");
  expect(app.store.state.error).toBeNull();
  await app.train("strong");
  expect(app.store.state.error).toBeNull();
  expect(app.store.state.phase).toBe("trained");
  await countersMatchServer();

  const headers = [...document.querySelectorAll("#train-panel th")].map((n) => n.textContent);
  expect(headers).toEqual([
    "model",
    "accuracy",
    "precision(+)",
    "precision(-)",
    "recall(+)",
    "recall(-)",
  ]);
  const rows = document.querySelectorAll("#train-panel .metrics tr");
  expect(rows.length).toBe(3); // header + strong + weak
});

it("reconstructs the whole UI from GET /sessions/{id} after a refresh", async () => {
  const sessionId = app.store.state.sessionId!;
  const before = app.store.state;
  await app.resume(sessionId); // what a page reload does
  const after = app.store.state;
  expect(after.counters).toEqual(before.counters);
  expect(after.history).toEqual(before.history);
  expect(after.metrics).toEqual(before.metrics);
  expect(after.marginals).toEqual(before.marginals);
  expect(after.phase).toBe("trained");
});

it("rejects further queries once trained, surfacing the error inline", async () => {
  await app.runQuery("refund");
  expect(app.store.state.error).toContain("illegal_state");
  expect(app.store.state.phase).toBe("trained");
});
