"""Labeling sessions: query rounds, verdicts, and threshold propagation.

A session runs in one of two modes.  In ``slp`` mode each query displays a
small sample drawn from the top, middle, and bottom score tiers of its result
neighborhood; when the displayed verdicts agree strongly enough, the majority
label propagates to the rest of the neighborhood as a weak labeling function.
In ``label_only`` mode the whole neighborhood is browsable page by page and
verdicts only ever produce strong labels.

Sessions serialize to an ordered script of actions that replays bit-exactly
against the same corpus fingerprint and seed.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, asdict
from enum import Enum
from pathlib import Path
from typing import Iterable

from .corpus import Corpus
from .errors import ReplayError, SessionError
from .index import Hit, InvertedIndex, Neighborhood
from .queryparse import QueryNode, parse_query

MODE_SLP = "slp"
MODE_LABEL_ONLY = "label_only"

SCRIPT_VERSION = 1


class Verdict(str, Enum):
    IN = "in"
    OUT = "out"
    ABSTAIN = "abstain"


class PropagationDecision(str, Enum):
    PROPAGATE_IN = "propagate_in"
    PROPAGATE_OUT = "propagate_out"
    NONE = "none"


@dataclass(frozen=True)
class SessionConfig:
    """Session-wide knobs, frozen at session start and recorded in scripts."""

    mode: str = MODE_SLP
    neighborhood_size: int = 100
    display_size: int = 10
    threshold: float = 0.6
    threshold_strict: bool = False  # True compares ratios with > instead of >=
    page_size: int = 10
    min_labels_per_query: int = 20  # advisory minimum surfaced in label_only mode
    rng_seed: int = 0
    class_prior: float = 0.5
    use_dependencies: bool = False
    em_max_iters: int = 100
    em_tol: float = 1e-8

    def __post_init__(self) -> None:
        if self.mode not in (MODE_SLP, MODE_LABEL_ONLY):
            raise SessionError(f"unknown session mode {self.mode!r}")
        if self.neighborhood_size <= 0:
            raise SessionError("neighborhood_size must be positive")
        if not 0 < self.display_size <= self.neighborhood_size:
            raise SessionError("display_size must be in [1, neighborhood_size]")
        if not 0.0 < self.threshold <= 1.0:
            raise SessionError("threshold must be in (0, 1]")
        if self.page_size <= 0:
            raise SessionError("page_size must be positive")
        if not 0.0 < self.class_prior < 1.0:
            raise SessionError("class_prior must be in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "SessionConfig":
        known = {f: data[f] for f in SessionConfig.__dataclass_fields__ if f in data}
        return SessionConfig(**known)


@dataclass
class PropagationOutcome:
    decision: PropagationDecision
    covered: tuple[int, ...] = ()

    @property
    def label(self) -> int:
        if self.decision is PropagationDecision.PROPAGATE_IN:
            return 1
        if self.decision is PropagationDecision.PROPAGATE_OUT:
            return -1
        raise SessionError("no label for a NoPropagation outcome")


@dataclass
class QueryRound:
    query_id: int
    raw_query: str
    ast: QueryNode
    neighborhood: Neighborhood
    displayed: list[int]
    verdicts: dict[int, Verdict] = field(default_factory=dict)
    outcome: PropagationOutcome | None = None  # frozen at finalize

    def verdict_counts(self) -> tuple[int, int, int]:
        n_in = sum(1 for v in self.verdicts.values() if v is Verdict.IN)
        n_out = sum(1 for v in self.verdicts.values() if v is Verdict.OUT)
        n_abstain = len(self.verdicts) - n_in - n_out
        return n_in, n_out, n_abstain


@dataclass(frozen=True)
class WeakFunction:
    """One propagated neighborhood: a weak labeling function over `covered`."""

    query_id: int
    label: int  # +1 or -1
    covered: tuple[int, ...]


@dataclass
class FinalizeResult:
    strong_labels: dict[int, int]
    functions: list[WeakFunction]

    @property
    def n_strong(self) -> int:
        return len(self.strong_labels)

    @property
    def n_weak(self) -> int:
        """Total propagated label count, summed across functions."""
        return sum(len(f.covered) for f in self.functions)


# --- pure helpers -------------------------------------------------------------


def tier_sizes(total: int) -> tuple[int, int, int]:
    """Split `total` ranked hits into top/middle/bottom tiers, remainder top-first."""
    base, remainder = divmod(total, 3)
    return (
        base + (1 if remainder >= 1 else 0),
        base + (1 if remainder >= 2 else 0),
        base,
    )


def sample_display(hits: list[Hit], k: int, rng: random.Random) -> list[int]:
    """Pick k candidates across score tiers, preserving score order in the output.

    Quotas follow the same top-first remainder rule as the tiers (k=10 gives
    4/3/3); any shortfall backfills from the remaining hits in score order.
    """
    if len(hits) <= k:
        return [h.utterance_id for h in hits]
    top_n, mid_n, _ = tier_sizes(len(hits))
    tiers = [
        list(range(0, top_n)),
        list(range(top_n, top_n + mid_n)),
        list(range(top_n + mid_n, len(hits))),
    ]
    quotas = tier_sizes(k)
    chosen: set[int] = set()
    for tier, quota in zip(tiers, quotas):
        take = min(quota, len(tier))
        chosen.update(rng.sample(tier, take))
    if len(chosen) < k:
        for rank in range(len(hits)):
            if rank not in chosen:
                chosen.add(rank)
                if len(chosen) == k:
                    break
    return [hits[rank].utterance_id for rank in sorted(chosen)]


def paginate(neighborhood: Neighborhood, page: int, page_size: int) -> list[Hit]:
    """1-based page of hits; pages past the end are empty."""
    if page < 1:
        raise SessionError(f"page must be >= 1, got {page}")
    if page_size < 1:
        raise SessionError(f"page_size must be >= 1, got {page_size}")
    start = (page - 1) * page_size
    return neighborhood.hits[start : start + page_size]


def propagate(
    round_: QueryRound, threshold: float, strict: bool = False
) -> PropagationOutcome:
    """Decide the round's propagation from displayed verdict ratios.

    The denominator is the displayed count (abstains and unverdicted
    candidates included); the covered set is every neighborhood member that
    got no user verdict this round.
    """
    if not round_.verdicts:
        raise SessionError(f"round {round_.query_id} has no verdicts to propagate from")
    k = len(round_.displayed)
    n_in, n_out, _ = round_.verdict_counts()
    meets = (lambda r: r > threshold) if strict else (lambda r: r >= threshold)
    if meets(n_in / k):
        decision = PropagationDecision.PROPAGATE_IN
    elif meets(n_out / k):
        decision = PropagationDecision.PROPAGATE_OUT
    else:
        return PropagationOutcome(PropagationDecision.NONE, ())
    covered = tuple(
        uid for uid in round_.neighborhood.ids() if uid not in round_.verdicts
    )
    return PropagationOutcome(decision, covered)


# --- session ------------------------------------------------------------------


class Session:
    def __init__(
        self,
        corpus: Corpus,
        index: InvertedIndex,
        intent: str,
        config: SessionConfig | None = None,
    ):
        if index.fingerprint != corpus.fingerprint:
            raise SessionError("index was built from a different corpus")
        self.corpus = corpus
        self.index = index
        self.intent = intent
        self.config = config or SessionConfig()
        self.rounds: list[QueryRound] = []
        self.finalized = False
        self._finalize_result: FinalizeResult | None = None
        # Chronological verdict events, one per accepted record_verdict call.
        self._events: list[tuple[int, int, Verdict]] = []
        self._script: list[dict] = [
            {
                "action": "header",
                "v": SCRIPT_VERSION,
                "intent": self.intent,
                "corpus_id": corpus.corpus_id,
                "corpus_fingerprint": corpus.fingerprint,
                "config": self.config.to_dict(),
            }
        ]

    # --- queries ---------------------------------------------------------

    def run_query(self, raw_query: str) -> QueryRound:
        self._require_open()
        ast = parse_query(raw_query)
        neighborhood = self.index.search(ast, self.config.neighborhood_size)
        query_id = len(self.rounds)
        if self.config.mode == MODE_SLP:
            rng = random.Random(f"{self.config.rng_seed}:{query_id}")
            displayed = sample_display(neighborhood.hits, self.config.display_size, rng)
        else:
            displayed = neighborhood.ids()
        round_ = QueryRound(
            query_id=query_id,
            raw_query=raw_query,
            ast=ast,
            neighborhood=neighborhood,
            displayed=displayed,
        )
        self.rounds.append(round_)
        self._script.append({"action": "query", "query_id": query_id, "q": raw_query})
        return round_

    def round_for(self, query_id: int) -> QueryRound:
        if not 0 <= query_id < len(self.rounds):
            raise SessionError(f"unknown query id {query_id}")
        return self.rounds[query_id]

    def page(self, query_id: int, page: int) -> list[Hit]:
        round_ = self.round_for(query_id)
        return paginate(round_.neighborhood, page, self.config.page_size)

    # --- verdicts ----------------------------------------------------------

    def record_verdict(self, query_id: int, candidate_id: int, verdict: Verdict | str) -> bool:
        """Record (or overwrite) a verdict; returns False for an idempotent repeat."""
        self._require_open()
        try:
            verdict = Verdict(verdict)
        except ValueError:
            raise SessionError(f"unknown verdict {verdict!r}") from None
        round_ = self.round_for(query_id)
        if self.config.mode == MODE_SLP:
            eligible = round_.displayed
            where = "displayed sample"
        else:
            eligible = round_.neighborhood.ids()
            where = "result neighborhood"
        if candidate_id not in eligible:
            raise SessionError(
                f"candidate {candidate_id} is not in the {where} of query {query_id}"
            )
        if round_.verdicts.get(candidate_id) is verdict:
            return False
        round_.verdicts[candidate_id] = verdict
        self._events.append((query_id, candidate_id, verdict))
        self._script.append(
            {
                "action": "verdict",
                "query_id": query_id,
                "candidate_id": candidate_id,
                "verdict": verdict.value,
            }
        )
        return True

    def strong_labels(self) -> dict[int, int]:
        """Latest non-abstain verdict per candidate, across all rounds."""
        labels: dict[int, int] = {}
        for _, candidate_id, verdict in self._events:
            if verdict is Verdict.IN:
                labels[candidate_id] = 1
            elif verdict is Verdict.OUT:
                labels[candidate_id] = -1
        return labels

    def round_outcome(self, round_: QueryRound) -> PropagationOutcome:
        """Current propagation outcome (provisional until finalize)."""
        if round_.outcome is not None:
            return round_.outcome
        if self.config.mode != MODE_SLP or not round_.verdicts:
            return PropagationOutcome(PropagationDecision.NONE, ())
        return propagate(round_, self.config.threshold, self.config.threshold_strict)

    # --- finalize -----------------------------------------------------------

    def finalize(self) -> FinalizeResult:
        self._require_open()
        if not any(r.verdicts for r in self.rounds):
            raise SessionError("cannot finalize a session with no verdicts")
        functions: list[WeakFunction] = []
        for round_ in self.rounds:
            outcome = self.round_outcome(round_)
            round_.outcome = outcome
            if outcome.decision is not PropagationDecision.NONE:
                functions.append(
                    WeakFunction(round_.query_id, outcome.label, outcome.covered)
                )
        self.finalized = True
        self._finalize_result = FinalizeResult(self.strong_labels(), functions)
        self._script.append({"action": "finalize"})
        return self._finalize_result

    @property
    def finalize_result(self) -> FinalizeResult:
        if self._finalize_result is None:
            raise SessionError("session is not finalized")
        return self._finalize_result

    def counters(self) -> dict[str, int]:
        n_weak = self._finalize_result.n_weak if self._finalize_result else 0
        return {
            "queries": len(self.rounds),
            "strong_labels": len(self.strong_labels()),
            "weak_labels": n_weak,
        }

    def instructions(self) -> dict:
        if self.config.mode == MODE_LABEL_ONLY:
            return {"min_labels_per_query": self.config.min_labels_per_query}
        return {"display_size": self.config.display_size}

    def _require_open(self) -> None:
        if self.finalized:
            raise SessionError("session is finalized")

    # --- script serialization -------------------------------------------------

    def script_records(self) -> list[dict]:
        return [dict(rec) for rec in self._script]

    def script_text(self) -> str:
        return "".join(
            json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n"
            for rec in self._script
        )

    def write_script(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.script_text(), encoding="utf-8")
        return path


def read_script(path: str | Path) -> list[dict]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ReplayError(f"script line {lineno}: invalid JSON: {exc}") from exc
    return records


def replay(records: Iterable[dict], corpus: Corpus, index: InvertedIndex) -> Session:
    """Rebuild a session by re-running a recorded script against the corpus."""
    records = list(records)
    if not records or records[0].get("action") != "header":
        raise ReplayError("script must start with a header record")
    header = records[0]
    if header.get("v") != SCRIPT_VERSION:
        raise ReplayError(f"unsupported script version {header.get('v')!r}")
    if header.get("corpus_fingerprint") != corpus.fingerprint:
        raise ReplayError(
            "script was recorded against a different corpus "
            f"(fingerprint {str(header.get('corpus_fingerprint'))[:12]}... != "
            f"{corpus.fingerprint[:12]}...)"
        )
    config = SessionConfig.from_dict(header.get("config", {}))
    session = Session(corpus, index, header.get("intent", ""), config)
    for n, record in enumerate(records[1:], start=2):
        action = record.get("action")
        try:
            if action == "query":
                round_ = session.run_query(record["q"])
                expected = record.get("query_id")
                if expected is not None and expected != round_.query_id:
                    raise ReplayError(
                        f"script record {n}: query_id {expected} != replayed {round_.query_id}"
                    )
            elif action == "verdict":
                session.record_verdict(
                    record["query_id"], record["candidate_id"], record["verdict"]
                )
            elif action == "finalize":
                session.finalize()
            else:
                raise ReplayError(f"script record {n}: unknown action {action!r}")
        except KeyError as exc:
            raise ReplayError(f"script record {n}: missing field {exc}") from exc
        except SessionError as exc:
            if isinstance(exc, ReplayError):
                raise
            raise ReplayError(f"script record {n}: {exc}") from exc
    return session
