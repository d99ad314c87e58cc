"""In-memory inverted index with Okapi-BM25 ranking and boolean retrieval.

Scoring uses the plain Okapi scheme.  For a query term t and document d:

    score(t, d) = idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len_d / avg_len))
    idf(t)      = ln(1 + (n_docs - df(t) + 0.5) / (df(t) + 0.5)), floored at 0

Query terms form a multiset: a term repeated in the query contributes once
per occurrence.  Boolean structure only restricts the candidate set; ranking
always comes from the positive terms of the query.
"""

from __future__ import annotations

import math
import pickle
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import Corpus
from .errors import CorpusError, SlpError
from .queryparse import And, Not, Or, Phrase, QueryNode, Term, positive_terms
from .tokenize import tokenize

DEFAULT_NEIGHBORHOOD_SIZE = 100

INDEX_CACHE_VERSION = 1
_INDEX_FORMAT = "slp-index"


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self) -> None:
        if self.k1 < 0:
            raise SlpError(f"k1 must be non-negative, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise SlpError(f"b must be in [0, 1], got {self.b}")


@dataclass(frozen=True)
class Hit:
    utterance_id: int
    score: float


@dataclass
class Neighborhood:
    """Ranked result set for one query, capped at `capacity` hits."""

    hits: list[Hit]
    capacity: int
    total_matches: int

    def ids(self) -> list[int]:
        return [h.utterance_id for h in self.hits]

    def __len__(self) -> int:
        return len(self.hits)


class InvertedIndex:
    """Positional postings over one corpus, frozen at build time."""

    def __init__(self, corpus: Corpus, params: Bm25Params | None = None):
        self.params = params or Bm25Params()
        self.fingerprint = corpus.fingerprint
        self.corpus_id = corpus.corpus_id
        self.postings: dict[str, dict[int, tuple[int, ...]]] = {}
        self.doc_len: dict[int, int] = {}
        for u in corpus:
            tokens = tokenize(u.text)
            self.doc_len[u.id] = len(tokens)
            seen: dict[str, list[int]] = {}
            for position, token in enumerate(tokens):
                seen.setdefault(token, []).append(position)
            for token, positions in seen.items():
                self.postings.setdefault(token, {})[u.id] = tuple(positions)
        self.n_docs = len(self.doc_len)
        total = sum(self.doc_len.values())
        self.avg_len = total / self.n_docs if self.n_docs else 0.0
        self._all_ids = frozenset(self.doc_len)

    # --- statistics ---------------------------------------------------------

    def document_frequency(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def term_frequency(self, term: str, utterance_id: int) -> int:
        return len(self.postings.get(term, {}).get(utterance_id, ()))

    def idf(self, term: str) -> float:
        df = self.document_frequency(term)
        return max(0.0, math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5)))

    # --- scoring --------------------------------------------------------------

    def bm25_score(self, terms: Sequence[str], utterance_id: int) -> float:
        if utterance_id not in self.doc_len:
            raise CorpusError(f"unknown utterance id {utterance_id}")
        k1, b = self.params.k1, self.params.b
        length_norm = 1.0 - b + b * self.doc_len[utterance_id] / self.avg_len
        score = 0.0
        for term in terms:
            tf = self.term_frequency(term, utterance_id)
            if tf == 0:
                continue
            score += self.idf(term) * tf * (k1 + 1.0) / (tf + k1 * length_norm)
        return score

    # --- boolean retrieval ----------------------------------------------------

    def matches(self, node: QueryNode) -> frozenset[int]:
        if isinstance(node, Term):
            return frozenset(self.postings.get(node.token, ()))
        if isinstance(node, Phrase):
            return self._phrase_matches(node.tokens)
        if isinstance(node, Not):
            return self._all_ids - self.matches(node.child)
        if isinstance(node, And):
            result: frozenset[int] | None = None
            for child in node.children:
                got = self.matches(child)
                result = got if result is None else result & got
                if not result:
                    return frozenset()
            return result or frozenset()
        if isinstance(node, Or):
            result: set[int] = set()
            for child in node.children:
                result |= self.matches(child)
            return frozenset(result)
        raise TypeError(f"unknown query node {node!r}")

    def _phrase_matches(self, tokens: tuple[str, ...]) -> frozenset[int]:
        docs: frozenset[int] | None = None
        for token in tokens:
            got = frozenset(self.postings.get(token, ()))
            docs = got if docs is None else docs & got
            if not docs:
                return frozenset()
        assert docs is not None
        out = set()
        first = self.postings[tokens[0]]
        position_sets = [self.postings[t] for t in tokens[1:]]
        for doc in docs:
            starts = first[doc]
            follow = [set(ps[doc]) for ps in position_sets]
            for start in starts:
                if all(start + offset + 1 in follow[offset] for offset in range(len(follow))):
                    out.add(doc)
                    break
        return frozenset(out)

    def search(self, query: QueryNode, capacity: int = DEFAULT_NEIGHBORHOOD_SIZE) -> Neighborhood:
        """Top `capacity` boolean matches ranked by BM25, ties by ascending id."""
        if capacity <= 0:
            raise SlpError(f"neighborhood capacity must be positive, got {capacity}")
        candidates = self.matches(query)
        terms = positive_terms(query)
        scored = [(self.bm25_score(terms, doc), doc) for doc in candidates]
        scored.sort(key=lambda pair: (-pair[0], pair[1]))
        hits = [Hit(doc, score) for score, doc in scored[:capacity]]
        return Neighborhood(hits=hits, capacity=capacity, total_matches=len(candidates))


def build_index(corpus: Corpus, params: Bm25Params | None = None) -> InvertedIndex:
    return InvertedIndex(corpus, params)


# --- binary cache keyed by corpus fingerprint --------------------------------


def save_index(index: InvertedIndex, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": _INDEX_FORMAT,
        "v": INDEX_CACHE_VERSION,
        "fingerprint": index.fingerprint,
        "index": index,
    }
    with path.open("wb") as fh:
        pickle.dump(payload, fh, protocol=pickle.HIGHEST_PROTOCOL)
    return path


def load_index(path: str | Path, fingerprint: str) -> InvertedIndex | None:
    """Load a cached index; None on any miss (absent, stale, wrong format)."""
    path = Path(path)
    if not path.exists():
        return None
    try:
        with path.open("rb") as fh:
            payload = pickle.load(fh)
    except Exception:
        return None
    if (
        not isinstance(payload, dict)
        or payload.get("format") != _INDEX_FORMAT
        or payload.get("v") != INDEX_CACHE_VERSION
        or payload.get("fingerprint") != fingerprint
    ):
        return None
    return payload["index"]


def load_or_build_index(
    corpus: Corpus, cache_path: str | Path | None = None, params: Bm25Params | None = None
) -> InvertedIndex:
    if cache_path is not None:
        cached = load_index(cache_path, corpus.fingerprint)
        if cached is not None:
            return cached
    index = build_index(corpus, params)
    if cache_path is not None:
        save_index(index, cache_path)
    return index
