"""Corpus ingestion, filtering, persistence, and test-set loading.

A corpus is an ordered collection of chat utterances with stable integer ids
and a content fingerprint.  Long utterances are dropped at ingestion time
(they are almost never single intents) and ids are assigned densely over the
retained records so downstream label matrices can use them as column indices.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .errors import CorpusError

log = logging.getLogger(__name__)

DEFAULT_MAX_CHARS = 204

_LABEL_TOKENS = {"pos": 1, "neg": -1}


@dataclass(frozen=True)
class Utterance:
    """One chat-log line. `text` is stripped and non-empty."""

    id: int
    text: str


@dataclass
class Corpus:
    corpus_id: str
    utterances: list[Utterance]
    max_chars: int = DEFAULT_MAX_CHARS
    fingerprint: str = ""
    dropped_long: int = 0
    dropped_empty: int = 0

    def __post_init__(self) -> None:
        if not self.fingerprint:
            self.fingerprint = fingerprint_utterances(self.utterances)
        self._by_id = {u.id: u for u in self.utterances}
        if len(self._by_id) != len(self.utterances):
            raise CorpusError("duplicate utterance ids in corpus")

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self.utterances)

    def __contains__(self, utterance_id: int) -> bool:
        return utterance_id in self._by_id

    @property
    def dropped(self) -> int:
        return self.dropped_long + self.dropped_empty

    @property
    def id_space(self) -> int:
        """Smallest n such that every utterance id is in [0, n)."""
        return max(self._by_id) + 1 if self._by_id else 0

    def text_of(self, utterance_id: int) -> str:
        try:
            return self._by_id[utterance_id].text
        except KeyError:
            raise CorpusError(f"unknown utterance id {utterance_id}") from None

    def texts(self) -> list[str]:
        return [u.text for u in self.utterances]

    def ids(self) -> list[int]:
        return [u.id for u in self.utterances]


def fingerprint_utterances(utterances: Iterable[Utterance]) -> str:
    h = hashlib.sha256()
    for u in utterances:
        h.update(f"{u.id}\x1f{u.text}\n".encode("utf-8"))
    return h.hexdigest()


def ingest(
    records: Iterable[str | Mapping],
    corpus_id: str = "corpus",
    max_chars: int = DEFAULT_MAX_CHARS,
) -> Corpus:
    """Build a corpus from raw records, dropping over-long and empty texts.

    Records are either bare strings or mappings with a required ``text`` and
    an optional non-negative integer ``id``.  Records without an id get the
    next unused integer, counted over retained records, so purely-anonymous
    input yields dense ids 0..n-1 after filtering.
    """
    if max_chars <= 0:
        raise CorpusError(f"max_chars must be positive, got {max_chars}")
    utterances: list[Utterance] = []
    used_ids: set[int] = set()
    dropped_long = 0
    dropped_empty = 0
    next_auto = 0
    for n, record in enumerate(records, start=1):
        if isinstance(record, str):
            explicit_id, text = None, record
        elif isinstance(record, Mapping):
            if "text" not in record:
                raise CorpusError(f"record {n}: missing 'text' field")
            explicit_id, text = record.get("id"), record["text"]
        else:
            raise CorpusError(f"record {n}: expected string or mapping")
        if not isinstance(text, str):
            raise CorpusError(f"record {n}: text must be a string")
        text = text.strip()
        if not text:
            dropped_empty += 1
            continue
        if len(text) > max_chars:
            dropped_long += 1
            continue
        if explicit_id is None:
            while next_auto in used_ids:
                next_auto += 1
            uid = next_auto
        else:
            if not isinstance(explicit_id, int) or isinstance(explicit_id, bool) or explicit_id < 0:
                raise CorpusError(f"record {n}: id must be a non-negative integer")
            uid = explicit_id
        if uid in used_ids:
            raise CorpusError(f"record {n}: duplicate utterance id {uid}")
        used_ids.add(uid)
        utterances.append(Utterance(uid, text))
    if not utterances:
        raise CorpusError("empty corpus: no utterances survived ingestion")
    return Corpus(
        corpus_id=corpus_id,
        utterances=utterances,
        max_chars=max_chars,
        dropped_long=dropped_long,
        dropped_empty=dropped_empty,
    )


def read_corpus_records(path: str | Path) -> Iterator[Mapping]:
    """Yield raw records from newline-delimited JSON or single-column text."""
    path = Path(path)
    suffix = path.suffix.lower()
    with path.open("r", encoding="utf-8") as fh:
        if suffix in {".jsonl", ".ndjson", ".json"}:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorpusError(f"{path.name} line {lineno}: invalid JSON: {exc}") from exc
                if not isinstance(obj, dict):
                    raise CorpusError(f"{path.name} line {lineno}: expected a JSON object")
                yield obj
        else:
            for line in fh:
                yield {"text": line.rstrip("\n")}


def ingest_file(
    path: str | Path,
    corpus_id: str | None = None,
    max_chars: int = DEFAULT_MAX_CHARS,
) -> Corpus:
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    return ingest(read_corpus_records(path), corpus_id or path.stem, max_chars)


# --- persistence ------------------------------------------------------------

MANIFEST_NAME = "manifest.json"
UTTERANCES_NAME = "utterances.jsonl"


def save_corpus(corpus: Corpus, directory: str | Path) -> Path:
    """Write utterances plus a sidecar manifest; returns the directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / UTTERANCES_NAME).open("w", encoding="utf-8") as fh:
        for u in corpus.utterances:
            fh.write(json.dumps({"id": u.id, "text": u.text}, sort_keys=True) + "\n")
    manifest = {
        "v": 1,
        "corpus_id": corpus.corpus_id,
        "fingerprint": corpus.fingerprint,
        "n_utterances": len(corpus),
        "max_chars": corpus.max_chars,
        "dropped_long": corpus.dropped_long,
        "dropped_empty": corpus.dropped_empty,
    }
    with (directory / MANIFEST_NAME).open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


def load_corpus(directory: str | Path) -> Corpus:
    """Load a persisted corpus, verifying the manifest fingerprint."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise CorpusError(f"no corpus manifest in {directory}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    utterances = []
    with (directory / UTTERANCES_NAME).open("r", encoding="utf-8") as fh:
        for line in fh:
            obj = json.loads(line)
            utterances.append(Utterance(obj["id"], obj["text"]))
    corpus = Corpus(
        corpus_id=manifest["corpus_id"],
        utterances=utterances,
        max_chars=manifest.get("max_chars", DEFAULT_MAX_CHARS),
        dropped_long=manifest.get("dropped_long", 0),
        dropped_empty=manifest.get("dropped_empty", 0),
    )
    if corpus.fingerprint != manifest["fingerprint"]:
        raise CorpusError(
            f"corpus content drifted: manifest fingerprint {manifest['fingerprint'][:12]} "
            f"!= recomputed {corpus.fingerprint[:12]}"
        )
    return corpus


# --- labeled test sets ------------------------------------------------------


@dataclass(frozen=True)
class TestRow:
    __test__ = False  # keep pytest from collecting this as a test class

    text: str
    intent: str
    label: int  # +1 for pos, -1 for neg


@dataclass
class TestSet:
    __test__ = False

    rows: list[TestRow]
    source: str = ""

    def __len__(self) -> int:
        return len(self.rows)

    def intents(self) -> list[str]:
        seen: dict[str, None] = {}
        for row in self.rows:
            seen.setdefault(row.intent, None)
        return list(seen)

    def rows_for(self, intent: str) -> list[TestRow]:
        return [r for r in self.rows if r.intent == intent]

    def positive_count(self, intent: str) -> int:
        return sum(1 for r in self.rows if r.intent == intent and r.label > 0)


def load_test_set(path: str | Path, corpus: Corpus | None = None) -> TestSet:
    """Read a labeled test set from CSV with columns ``text,intent,label``.

    Labels must be the tokens ``pos`` or ``neg``.  When a corpus is supplied,
    test texts that also appear in it are flagged with a warning (a real-data
    convenience; the synthetic harness always keeps the two disjoint).
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"test set file not found: {path}")
    rows: list[TestRow] = []
    seen: set[tuple[str, str]] = set()
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise CorpusError(f"{path.name}: empty test set")
        missing = {"text", "intent", "label"} - set(reader.fieldnames)
        if missing:
            raise CorpusError(f"{path.name}: missing columns {sorted(missing)}")
        for lineno, record in enumerate(reader, start=2):
            text = (record["text"] or "").strip()
            intent = (record["intent"] or "").strip()
            token = (record["label"] or "").strip()
            if token not in _LABEL_TOKENS:
                raise CorpusError(
                    f"{path.name} line {lineno}: unknown label {token!r} (expected pos or neg)"
                )
            if not text or not intent:
                raise CorpusError(f"{path.name} line {lineno}: empty text or intent")
            key = (text, intent)
            if key in seen:
                raise CorpusError(f"{path.name} line {lineno}: duplicate (text, intent) entry")
            seen.add(key)
            rows.append(TestRow(text, intent, _LABEL_TOKENS[token]))
    if not rows:
        raise CorpusError(f"{path.name}: empty test set")
    if corpus is not None:
        train_texts = set(corpus.texts())
        overlap = sum(1 for r in rows if r.text in train_texts)
        if overlap:
            log.warning("%d test rows also appear in corpus %s", overlap, corpus.corpus_id)
    return TestSet(rows=rows, source=str(path))


def save_test_set(test_set: TestSet, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["text", "intent", "label"])
        for row in test_set.rows:
            writer.writerow([row.text, row.intent, "pos" if row.label > 0 else "neg"])
    return path
