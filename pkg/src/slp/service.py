"""HTTP JSON service over corpora, labeling sessions, and model training.

The service holds corpora and sessions in memory and optionally mirrors them
to a data directory (corpora, index caches, session scripts, trained models)
so headless CLI runs can replay what a UI session recorded.  All payloads
carry a ``v`` schema version; errors come back as ``{"code", "message"}``
with 404 for unknown ids, 409 for illegal state transitions, and 422 for
validation failures.
"""

from __future__ import annotations

import tempfile
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, model_validator

from .corpus import Corpus, TestSet, ingest, load_corpus, load_test_set, save_corpus
from .downstream import (
    ForestHyperparams,
    TfidfFeaturizer,
    evaluate,
    fit_tfidf,
    save_model,
    strong_training_set,
    train_classifier,
    train_regressor,
    weak_training_set,
)
from .errors import SlpError
from .index import InvertedIndex, build_index, load_or_build_index
from .labelmodel import format_marginals, marginals_for_session
from .session import MODE_SLP, Session, SessionConfig

SCHEMA_VERSION = 1

STATE_OPEN = "open"
STATE_FINALIZED = "finalized"
STATE_TRAINED = "trained"


def api_error(status: int, code: str, message: str) -> HTTPException:
    return HTTPException(status_code=status, detail={"code": code, "message": message})


# --- request bodies ---------------------------------------------------------


class CorpusIn(BaseModel):
    v: int = 1
    corpus_id: str | None = None
    utterances: list[str | dict] | None = None
    data: str | None = None
    format: Literal["ndjson", "text"] = "ndjson"
    test_csv: str | None = None
    max_chars: int = 204

    @model_validator(mode="after")
    def exactly_one_payload(self):
        if (self.utterances is None) == (self.data is None):
            raise ValueError("provide exactly one of 'utterances' or 'data'")
        return self


class SessionIn(BaseModel):
    v: int = 1
    corpus_id: str
    intent: str
    config: dict = {}


class QueryIn(BaseModel):
    v: int = 1
    q: str


class VerdictIn(BaseModel):
    v: int = 1
    query_id: int
    candidate_id: int
    verdict: Literal["in", "out", "abstain"]


class TrainIn(BaseModel):
    v: int = 1
    mode: Literal["strong", "weak"]
    decision_threshold: float = 0.5


# --- server-side state ------------------------------------------------------


@dataclass
class CorpusEntry:
    corpus: Corpus
    test_set: TestSet | None = None
    index: InvertedIndex | None = None
    featurizer: TfidfFeaturizer | None = None


@dataclass
class ApiSession:
    """One labeling session plus everything derived from it after finalize."""

    session_id: str
    corpus_id: str
    session: Session
    state: str = STATE_OPEN
    n_functions: int = 0
    marginals: dict[int, float] | None = None
    anchor_ids: frozenset[int] = frozenset()
    metrics: dict[str, dict | None] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def version(self) -> int:
        # script length doubles as an optimistic-concurrency state version
        return len(self.session.script_records())


@dataclass
class ServiceState:
    data_dir: Path | None = None
    async_jobs: bool = False
    corpora: dict[str, CorpusEntry] = field(default_factory=dict)
    sessions: dict[str, ApiSession] = field(default_factory=dict)
    jobs: dict[str, dict] = field(default_factory=dict)
    registry_lock: threading.Lock = field(default_factory=threading.Lock)

    def corpus_entry(self, corpus_id: str) -> CorpusEntry:
        entry = self.corpora.get(corpus_id)
        if entry is None:
            raise api_error(404, "unknown_corpus", f"no corpus {corpus_id!r}")
        return entry

    def api_session(self, session_id: str) -> ApiSession:
        found = self.sessions.get(session_id)
        if found is None:
            raise api_error(404, "unknown_session", f"no session {session_id!r}")
        return found

    def persist_script(self, api: ApiSession) -> None:
        if self.data_dir is None:
            return
        path = self.data_dir / "sessions" / f"{api.session_id}.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(api.session.script_text(), encoding="utf-8")


def _parse_test_csv(text: str, corpus: Corpus) -> TestSet:
    # route through the file loader so CSV validation lives in one place
    with tempfile.NamedTemporaryFile("w", suffix=".csv", delete=False, encoding="utf-8") as fh:
        fh.write(text)
        tmp = Path(fh.name)
    try:
        return load_test_set(tmp, corpus)
    finally:
        tmp.unlink(missing_ok=True)


def _round_payload(round_) -> dict:
    n_in, n_out, n_abstain = round_.verdict_counts()
    payload = {
        "query_id": round_.query_id,
        "q": round_.raw_query,
        "displayed": list(round_.displayed),
        "total_matches": round_.neighborhood.total_matches,
        "neighborhood_size": len(round_.neighborhood.ids()),
        "verdicts": {"in": n_in, "out": n_out, "abstain": n_abstain},
    }
    if round_.outcome is not None:
        payload["propagation"] = round_.outcome.decision.value
        payload["n_covered"] = len(round_.outcome.covered)
    return payload


def create_app(
    data_dir: str | Path | None = None, async_jobs: bool = False
) -> FastAPI:
    state = ServiceState(
        data_dir=Path(data_dir) if data_dir is not None else None,
        async_jobs=async_jobs,
    )
    app = FastAPI(title="slp", version=str(SCHEMA_VERSION))
    app.state.slp = state
    # the browser UI is served from a different origin than the API
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.exception_handler(HTTPException)
    async def http_error(request: Request, exc: HTTPException):
        detail = exc.detail
        if not (isinstance(detail, dict) and {"code", "message"} <= set(detail)):
            detail = {"code": "error", "message": str(detail)}
        return JSONResponse(status_code=exc.status_code, content=detail)

    @app.exception_handler(RequestValidationError)
    async def validation_error(request: Request, exc: RequestValidationError):
        parts = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err.get("loc", ()) if p != "body")
            parts.append(f"{loc}: {err.get('msg')}" if loc else str(err.get("msg")))
        return JSONResponse(
            status_code=422,
            content={"code": "validation_error", "message": "; ".join(parts)},
        )

    @app.exception_handler(SlpError)
    async def slp_error(request: Request, exc: SlpError):
        return JSONResponse(
            status_code=422,
            content={"code": type(exc).__name__.lower().removesuffix("error") or "error",
                     "message": str(exc)},
        )

    def check_version(v: int) -> None:
        if v != SCHEMA_VERSION:
            raise api_error(422, "validation_error", f"unsupported payload version {v}")

    def finalize_session(api: ApiSession) -> dict:
        with api.lock:
            if api.state != STATE_OPEN:
                raise api_error(409, "illegal_state", f"session is {api.state}")
            entry = state.corpus_entry(api.corpus_id)
            result = api.session.finalize()
            if api.session.config.mode == MODE_SLP:
                matrix, _, marginals = marginals_for_session(api.session)
                api.marginals = marginals
                api.anchor_ids = frozenset(matrix.anchor)
            api.n_functions = len(result.functions)
            api.state = STATE_FINALIZED
            state.persist_script(api)
            return {
                "v": SCHEMA_VERSION,
                "session_id": api.session_id,
                "state": api.state,
                "n_functions": api.n_functions,
                "n_strong": result.n_strong,
                "n_weak": result.n_weak,
                "version": api.version,
            }

    def train_session(api: ApiSession, body: TrainIn) -> dict:
        with api.lock:
            if api.state == STATE_OPEN:
                raise api_error(409, "illegal_state", "finalize the session before training")
            entry = state.corpus_entry(api.corpus_id)
            if entry.featurizer is None:
                entry.featurizer = fit_tfidf(entry.corpus)
            hp = ForestHyperparams()
            if body.mode == "strong":
                texts, labels = strong_training_set(
                    api.session.finalize_result.strong_labels, entry.corpus
                )
                model = train_classifier(entry.featurizer.transform(texts), labels, hp)
                n_rows = len(texts)
            else:
                if api.marginals is None:
                    raise api_error(
                        422, "validation_error",
                        "weak training needs label-model marginals; this session has none "
                        "(label_only mode produces strong labels only)",
                    )
                texts, targets = weak_training_set(api.marginals, entry.corpus)
                model = train_regressor(entry.featurizer.transform(texts), targets, hp)
                n_rows = len(texts)
            metrics = None
            if entry.test_set is not None:
                metrics = evaluate(
                    model,
                    entry.featurizer,
                    entry.test_set,
                    api.session.intent,
                    decision_threshold=body.decision_threshold,
                ).to_dict()
            api.metrics[body.mode] = metrics
            api.state = STATE_TRAINED
            if state.data_dir is not None:
                path = state.data_dir / "models" / f"{api.session_id}-{body.mode}.pkl"
                save_model(model, entry.featurizer, path)
            return {
                "v": SCHEMA_VERSION,
                "session_id": api.session_id,
                "state": api.state,
                "mode": body.mode,
                "n_training_rows": n_rows,
                "metrics": metrics,
                "version": api.version,
            }

    def job_wrap(runner, *args) -> JSONResponse:
        # the 202 + poll contract for large corpora; work still runs inline
        result = runner(*args)
        job_id = f"j{uuid.uuid4().hex[:12]}"
        state.jobs[job_id] = {"state": "done", "result": result}
        return JSONResponse(
            status_code=202,
            content={"v": SCHEMA_VERSION, "job_id": job_id, "poll": f"/jobs/{job_id}"},
        )

    @app.get("/healthz")
    def healthz() -> dict:
        return {
            "v": SCHEMA_VERSION,
            "status": "ok",
            "corpora": len(state.corpora),
            "sessions": len(state.sessions),
        }

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str) -> dict:
        job = state.jobs.get(job_id)
        if job is None:
            raise api_error(404, "unknown_job", f"no job {job_id!r}")
        return {"v": SCHEMA_VERSION, "job_id": job_id, **job}

    @app.post("/corpora", status_code=201)
    def post_corpus(body: CorpusIn) -> dict:
        check_version(body.v)
        if body.utterances is not None:
            records = body.utterances
        elif body.format == "ndjson":
            import json as _json

            records = []
            for n, line in enumerate(body.data.splitlines(), start=1):
                if not line.strip():
                    continue
                try:
                    records.append(_json.loads(line))
                except ValueError as exc:
                    raise api_error(422, "validation_error", f"data line {n}: {exc}")
        else:
            records = [line for line in body.data.splitlines()]
        with state.registry_lock:
            corpus_id = body.corpus_id or f"c{uuid.uuid4().hex[:12]}"
            if corpus_id in state.corpora:
                raise api_error(409, "duplicate_corpus", f"corpus {corpus_id!r} already exists")
            corpus = ingest(records, corpus_id=corpus_id, max_chars=body.max_chars)
            entry = CorpusEntry(corpus=corpus)
            if body.test_csv is not None:
                entry.test_set = _parse_test_csv(body.test_csv, corpus)
            state.corpora[corpus_id] = entry
        if state.data_dir is not None:
            save_corpus(corpus, state.data_dir / "corpora" / corpus_id)
        return {
            "v": SCHEMA_VERSION,
            "corpus_id": corpus_id,
            "n_utterances": len(corpus),
            "dropped": corpus.dropped,
            "fingerprint": corpus.fingerprint,
            "has_test_set": entry.test_set is not None,
        }

    @app.post("/corpora/{corpus_id}/index")
    def post_index(corpus_id: str) -> dict:
        entry = state.corpus_entry(corpus_id)
        cached = entry.index is not None
        if entry.index is None:
            if state.data_dir is not None:
                cache = state.data_dir / "indexes" / f"{corpus_id}.pkl"
                entry.index = load_or_build_index(entry.corpus, cache)
            else:
                entry.index = build_index(entry.corpus)
        return {
            "v": SCHEMA_VERSION,
            "corpus_id": corpus_id,
            "fingerprint": entry.corpus.fingerprint,
            "n_documents": len(entry.corpus),
            "cached": cached,
        }

    @app.post("/sessions", status_code=201)
    def post_session(body: SessionIn) -> dict:
        check_version(body.v)
        entry = state.corpus_entry(body.corpus_id)
        if entry.index is None:
            raise api_error(
                409, "illegal_state", f"corpus {body.corpus_id!r} is not indexed yet"
            )
        if not body.intent.strip():
            raise api_error(422, "validation_error", "intent: must be non-empty")
        unknown = set(body.config) - set(SessionConfig.__dataclass_fields__)
        if unknown:
            raise api_error(
                422, "validation_error", f"config: unknown fields {sorted(unknown)}"
            )
        config = SessionConfig.from_dict(body.config)
        session = Session(entry.corpus, entry.index, body.intent.strip(), config)
        api = ApiSession(
            session_id=f"s{uuid.uuid4().hex[:12]}",
            corpus_id=body.corpus_id,
            session=session,
        )
        with state.registry_lock:
            state.sessions[api.session_id] = api
        state.persist_script(api)
        return {
            "v": SCHEMA_VERSION,
            "session_id": api.session_id,
            "corpus_id": api.corpus_id,
            "intent": session.intent,
            "mode": config.mode,
            "state": api.state,
            "version": api.version,
            "instructions": session.instructions(),
        }

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        api = state.api_session(session_id)
        with api.lock:
            session = api.session
            return {
                "v": SCHEMA_VERSION,
                "session_id": api.session_id,
                "corpus_id": api.corpus_id,
                "intent": session.intent,
                "mode": session.config.mode,
                "state": api.state,
                "version": api.version,
                "counters": session.counters(),
                "config": session.config.to_dict(),
                "rounds": [_round_payload(r) for r in session.rounds],
                "n_functions": api.n_functions,
                "metrics": api.metrics,
            }

    @app.post("/sessions/{session_id}/queries")
    def post_query(session_id: str, body: QueryIn) -> dict:
        check_version(body.v)
        api = state.api_session(session_id)
        with api.lock:
            if api.state != STATE_OPEN:
                raise api_error(409, "illegal_state", f"session is {api.state}")
            round_ = api.session.run_query(body.q)
            state.persist_script(api)
            scores = {h.utterance_id: h.score for h in round_.neighborhood.hits}
            ranks = {uid: i for i, uid in enumerate(round_.neighborhood.ids())}
            return {
                "v": SCHEMA_VERSION,
                "query_id": round_.query_id,
                "displayed": [
                    {
                        "candidate_id": uid,
                        "text": api.session.corpus.text_of(uid),
                        "score": scores[uid],
                        "rank": ranks[uid],
                    }
                    for uid in round_.displayed
                ],
                "total_matches": round_.neighborhood.total_matches,
                "neighborhood_size": len(round_.neighborhood.ids()),
                "version": api.version,
            }

    @app.post("/sessions/{session_id}/verdicts")
    def post_verdict(session_id: str, body: VerdictIn) -> dict:
        check_version(body.v)
        api = state.api_session(session_id)
        with api.lock:
            if api.state != STATE_OPEN:
                raise api_error(409, "illegal_state", f"session is {api.state}")
            recorded = api.session.record_verdict(
                body.query_id, body.candidate_id, body.verdict
            )
            if recorded:
                state.persist_script(api)
            return {
                "v": SCHEMA_VERSION,
                "recorded": recorded,
                "version": api.version,
                "counters": api.session.counters(),
            }

    @app.post("/sessions/{session_id}/finalize")
    def post_finalize(session_id: str):
        api = state.api_session(session_id)
        if state.async_jobs:
            return job_wrap(finalize_session, api)
        return finalize_session(api)

    @app.post("/sessions/{session_id}/train")
    def post_train(session_id: str, body: TrainIn):
        check_version(body.v)
        api = state.api_session(session_id)
        if state.async_jobs:
            return job_wrap(train_session, api, body)
        return train_session(api, body)

    @app.get("/sessions/{session_id}/export")
    def get_export(session_id: str, what: str) -> PlainTextResponse:
        api = state.api_session(session_id)
        with api.lock:
            if what == "script":
                return PlainTextResponse(
                    api.session.script_text(), media_type="application/x-ndjson"
                )
            if what == "marginals":
                if api.marginals is None:
                    raise api_error(
                        409, "illegal_state",
                        "no marginals: finalize an slp-mode session first",
                    )
                return PlainTextResponse(
                    format_marginals(api.marginals, api.anchor_ids),
                    media_type="text/csv",
                )
            if what == "labels":
                if api.state == STATE_OPEN:
                    raise api_error(409, "illegal_state", "finalize the session first")
                labels = api.session.finalize_result.strong_labels
                lines = ["utterance_id,label"]
                lines += [f"{uid},{labels[uid]}" for uid in sorted(labels)]
                return PlainTextResponse("\n".join(lines) + "\n", media_type="text/csv")
        raise api_error(
            422, "validation_error", f"what: expected marginals|labels|script, got {what!r}"
        )

    return app


def load_persisted_corpora(app: FastAPI) -> int:
    """Re-register corpora previously saved under the service data dir."""
    state: ServiceState = app.state.slp
    if state.data_dir is None:
        return 0
    root = state.data_dir / "corpora"
    if not root.is_dir():
        return 0
    n = 0
    for child in sorted(root.iterdir()):
        if not child.is_dir():
            continue
        corpus = load_corpus(child)
        if corpus.corpus_id not in state.corpora:
            state.corpora[corpus.corpus_id] = CorpusEntry(corpus=corpus)
            n += 1
    return n
