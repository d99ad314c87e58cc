"""Synthetic experiment harness: generate chat-log worlds, label them with a
noisy scripted oracle under realistic budgets, and compare strategies.

The harness answers one question end to end: given the same corpus and the
same labeling effort, how do downstream models trained on (a) strong labels
from plain search-and-label, (b) strong labels from tier-sampled sessions,
and (c) propagated weak labels compare on a held-out test set?
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import Corpus, TestRow, TestSet, ingest
from .downstream import (
    ForestHyperparams,
    Metrics,
    TfidfFeaturizer,
    evaluate,
    fit_tfidf,
    strong_training_set,
    train_classifier,
    train_regressor,
    weak_training_set,
)
from .errors import ConfigError
from .index import InvertedIndex, build_index
from .labelmodel import marginals_for_session, format_marginals
from .report import Aggregate, ResultRow, METRIC_COLUMNS
from .session import (
    MODE_LABEL_ONLY,
    MODE_SLP,
    Session,
    SessionConfig,
    Verdict,
)

# --- synthetic world ------------------------------------------------------------


@dataclass(frozen=True)
class IntentSpec:
    """One synthetic intent: its true templates plus the analyst's scripted queries.

    ``queries`` drives slp sessions (positive probes interleaved with wide
    negative probes).  ``label_queries`` drives the label-only baseline, which
    per the guided-learning recipe only ever searches for positives.
    """

    name: str
    prevalence: float
    keywords: tuple[str, ...]
    templates: tuple[str, ...]
    queries: tuple[str, ...] = ()
    label_queries: tuple[str, ...] = ()


_OBJECTS = ("order", "item", "product", "purchase", "laptop", "device", "charger", "headset")
_DAYS = (
    "today", "tomorrow", "monday", "tuesday", "wednesday", "thursday",
    "friday", "saturday", "sunday", "tonight", "yesterday", "next week",
)
_NAMES = (
    "alex", "sam", "jordan", "taylor", "casey", "morgan", "riley", "jamie",
    "drew", "quinn", "avery", "robin", "the manager", "support", "your team", "marketing",
)
_WORDS = (
    "haha", "btw", "fyi", "ok", "cool", "nice", "sure", "yep",
    "hey", "oh", "hmm", "right", "honestly", "also", "anyway", "cheers",
)

_INTENT_KEYWORDS: dict[str, tuple[str, ...]] = {
    "refund": ("refund", "reimbursement"),
    "schedule": ("schedule", "meeting"),
    "upgrade": ("upgrade", "premium"),
    "password": ("password", "reset"),
    "shipping": ("shipping", "delivery"),
    "promo": ("promo", "discount"),
}

# Queryable vocabulary per intent: the keyword pool plus the variant words
# hardcoded in individual templates.  Distractor probes sweep these.
_PROBE_WORDS: dict[str, tuple[str, ...]] = {
    "refund": ("refund", "reimbursement", "refunded", "repayment"),
    "schedule": ("schedule", "meeting", "appointment", "reschedule", "calendar"),
    "upgrade": ("upgrade", "premium", "plan", "tier", "subscription"),
    "password": ("password", "reset", "login", "locked", "passcode"),
    "shipping": ("shipping", "delivery", "package", "tracking", "shipment"),
    "promo": ("promo", "discount", "coupon", "voucher", "deal"),
}

# One marker word per background template, and no rendered text matches two of
# them, so the top of the ranking interleaves all twelve chatter clusters
# instead of being swallowed by one.
_CHATTER_WORDS = (
    "help", "catch", "great", "weather", "lunch", "game",
    "movie", "check", "hope", "message", "worries", "office",
)


# Five positive-seeking probes per intent.  label-only sessions run exactly
# these (guided learning never searches for negatives); slp sessions interleave
# them with wide negative probes via _probe_script.
_POSITIVE_PROBES: dict[str, tuple[str, str, str, str, str]] = {
    "refund": ("refund", "reimbursement", '"money back"', "refund OR refunded", "repayment"),
    "schedule": ("schedule", "meeting OR appointment", '"team agenda"', "schedule OR reschedule", "calendar"),
    "upgrade": ("upgrade", "premium OR plan", '"bigger plan"', "upgrade OR premium", "subscription"),
    "password": ("password", "reset OR login", '"sign in"', "password OR passcode", "locked"),
    "shipping": ("shipping", "delivery OR package", '"the courier"', "shipping OR shipment", "tracking"),
    "promo": ("promo", "discount OR coupon", '"at checkout"', "promo OR voucher", "deal"),
}


def _probe_script(name: str) -> tuple[str, ...]:
    """Interleave the intent's five positive probes with four wide negative probes.

    The negative probes give the propagated label set its negative mass: one
    sweeps the chatter templates, one sweeps the sibling intents, and each is
    re-issued with the words reversed.  A reversed bag scores identically, so
    the paired rounds share a neighborhood and their propagated functions
    overlap almost completely, which is the agreement signal EM needs to learn
    that these functions are accurate.  Without wide negative probes, every
    vocabulary cluster that picks up cross-talk noise inside a positive
    neighborhood turns into a false-positive region of the downstream model.
    """
    p1, p2, p3, p4, p5 = _POSITIVE_PROBES[name]
    chatter = " ".join(_CHATTER_WORDS)
    chatter_rev = " ".join(reversed(_CHATTER_WORDS))
    distractor_words = [w for n in _PROBE_WORDS if n != name for w in _PROBE_WORDS[n]]
    distractor = " ".join(distractor_words)
    distractor_rev = " ".join(reversed(distractor_words))
    return (p1, distractor, p2, chatter, p3, distractor_rev, p4, chatter_rev, p5)


DEFAULT_INTENTS: tuple[IntentSpec, ...] = (
    IntentSpec(
        name="refund",
        prevalence=0.04,
        keywords=_INTENT_KEYWORDS["refund"],
        templates=(
            "i want a {kw} for my {obj} when does the {kw} arrive",
            "my {kw} for order {num} is late is the {kw} even coming",
            "you promised a {kw} {day} where is that {kw} {name}",
            "the {obj} broke i need a {kw} a full {kw} please",
            "status of my {kw} for order {num} the {kw} shows pending",
            "please process my {kw} now {name}",
            "can i get a {kw} on the {obj} i bought {day}",
            "how do i request a {kw} for order {num}",
            "i was charged twice please send a {kw} for the difference",
            "i want my money back for the {obj} from {day}",
            "has my order {num} been refunded yet",
            "when will the repayment for my {obj} show up {name}",
        ),
        queries=_probe_script("refund"),
        label_queries=_POSITIVE_PROBES["refund"],
    ),
    IntentSpec(
        name="schedule",
        prevalence=0.06,
        keywords=_INTENT_KEYWORDS["schedule"],
        templates=(
            "can we {kw} a call {day} a short {kw} with {name}",
            "i need a {kw} about order {num} can the {kw} be {day}",
            "move my {kw} with {name} the {kw} clashes with {day}",
            "is the {kw} still on for {day} or is the {kw} moved",
            "put a {kw} on the team agenda {name} one {kw} only",
            "what time is my {kw} on {day}",
            "who else should join the {kw} on {day}",
            "let us {kw} thirty minutes to review the {obj} rollout",
            "{name} asked to move our {kw} to {day}",
            "can you book an appointment with {name} for {day}",
            "please reschedule my session with {name} to {day}",
            "add a calendar hold for {day} {name}",
        ),
        queries=_probe_script("schedule"),
        label_queries=_POSITIVE_PROBES["schedule"],
    ),
    IntentSpec(
        name="upgrade",
        prevalence=0.06,
        keywords=_INTENT_KEYWORDS["upgrade"],
        templates=(
            "how much is the {kw} i want the {kw} on account {num}",
            "does the {kw} include more storage the {kw} page is vague",
            "move me to the {kw} {name} the {kw} starts {day}",
            "my team outgrew this {kw} quote the bigger {kw} please",
            "is there a trial of the {kw} before i buy the {kw}",
            "i want to {kw} before {day} {name}",
            "what does the {kw} cost per seat for {num} users",
            "the {kw} page will not load from my {obj}",
            "after the {kw} do i keep my old rate from {day}",
            "switch me to the bigger plan for order {num}",
            "the subscription change i made {day} never applied",
            "can i move to a higher tier {day} {name}",
        ),
        queries=_probe_script("upgrade"),
        label_queries=_POSITIVE_PROBES["upgrade"],
    ),
    IntentSpec(
        name="password",
        prevalence=0.06,
        keywords=_INTENT_KEYWORDS["password"],
        templates=(
            "i forgot my {kw} can you send a {kw} link {name}",
            "my {kw} fails on my {obj} the {kw} worked {day}",
            "need a temporary {kw} {day} any {kw} works {name}",
            "the {kw} link expired send another {kw} to user {num}",
            "why does the {kw} page reject me try the {kw} again",
            "please force a {kw} for user {num}",
            "after the {kw} i still cannot sign in {name}",
            "i typed the {kw} wrong too many times on my {obj}",
            "single sign on broke and {name} cannot fix the {kw}",
            "my login for account {num} stopped working {day}",
            "my account is locked after {num} tries",
            "the passcode from the text {day} never arrived",
        ),
        queries=_probe_script("password"),
        label_queries=_POSITIVE_PROBES["password"],
    ),
    IntentSpec(
        name="shipping",
        prevalence=0.06,
        keywords=_INTENT_KEYWORDS["shipping"],
        templates=(
            "where is my {kw} for order {num} the {kw} was due {day}",
            "can you expedite the {kw} my {obj} needs {kw} by {day}",
            "the {kw} address is wrong fix the {kw} for order {num}",
            "my {kw} shows delivered but no {kw} ever came {name}",
            "how long does {kw} take the {kw} estimate keeps moving",
            "the courier returned my {kw} to the depot {day}",
            "update the {kw} method on order {num} please",
            "my {obj} left the warehouse {day} but the {kw} stalled",
            "customs is holding the {kw} since {day} {name}",
            "the package for order {num} arrived damaged {day}",
            "the tracking number for order {num} does not work",
            "the shipment from {day} arrived without the {obj}",
        ),
        queries=_probe_script("shipping"),
        label_queries=_POSITIVE_PROBES["shipping"],
    ),
    IntentSpec(
        name="promo",
        prevalence=0.06,
        keywords=_INTENT_KEYWORDS["promo"],
        templates=(
            "do you have a {kw} code the last {kw} expired {day}",
            "the {kw} was rejected at checkout retry the {kw} {name}",
            "can i stack the {kw} with the student {kw} {name}",
            "the {kw} knocked nothing off where did the {kw} go",
            "is the {kw} valid on the {obj} bundle or one {kw} each",
            "{name} mentioned a {kw} ending {day}",
            "where do i type the {kw} at checkout for order {num}",
            "the {kw} from the email {day} says expired",
            "price matched but the {kw} dropped off order {num}",
            "my coupon code from {day} will not apply",
            "the voucher {name} sent me bounced {day}",
            "the deal {name} quoted is gone from the site",
        ),
        queries=_probe_script("promo"),
        label_queries=_POSITIVE_PROBES["promo"],
    ),
)

# Three independent slots per template keep the rendered text space large, so
# the held-out split retains background variants instead of deduping them away.
BACKGROUND_TEMPLATES: tuple[str, ...] = (
    "{word} thanks so much for your help {name} talk {day}",
    "{word} ok sounds good {name} catch up {day}",
    "{word} that sounds great thanks {name} see you {day}",
    "{word} how is the weather over there {day} {name}",
    "{word} lunch at noon {day} works for me {name}",
    "{word} did you watch the game {day} {name}",
    "{word} what did you think of the movie {name} {day}",
    "{word} let me check with {name} and get back to you {day}",
    "{word} good morning {name} hope all is well {day}",
    "{word} sorry i missed your message {day} {name}",
    "{word} no worries take your time {name} see you {day}",
    "{word} i will be out of the office {day} {name}",
)

_SLOT_RE = re.compile(r"\{(\w+)\}")


def _fill(template: str, keyword_pool: Sequence[str], rng: random.Random) -> str:
    # One keyword draw per render: people repeat the same word, and repeated
    # terms are what push true positives above cross-talk noise in the ranking.
    keyword = rng.choice(keyword_pool) if keyword_pool and "{kw}" in template else None

    def sub(match: re.Match) -> str:
        slot = match.group(1)
        if slot == "kw":
            if keyword is None:
                raise ConfigError(f"template {template!r} uses {{kw}} without keywords")
            return keyword
        if slot == "obj":
            return rng.choice(_OBJECTS)
        if slot == "day":
            return rng.choice(_DAYS)
        if slot == "name":
            return rng.choice(_NAMES)
        if slot == "num":
            return str(rng.randint(1000, 9999))
        if slot == "word":
            return rng.choice(_WORDS)
        raise ConfigError(f"unknown template slot {{{slot}}} in {template!r}")

    return _SLOT_RE.sub(sub, template)


@dataclass(frozen=True)
class SyntheticSpec:
    n_utterances: int = 10_000
    intents: tuple[IntentSpec, ...] = DEFAULT_INTENTS
    noise_rate: float = 0.02
    test_fraction: float = 0.1
    rng_seed: int = 0
    max_chars: int = 204

    def __post_init__(self) -> None:
        if self.n_utterances < 10:
            raise ConfigError("n_utterances must be at least 10")
        if not self.intents:
            raise ConfigError("at least one intent is required")
        names = [it.name for it in self.intents]
        if len(set(names)) != len(names):
            raise ConfigError("intent names must be unique")
        total = sum(it.prevalence for it in self.intents)
        if total > 1.0 + 1e-9:
            raise ConfigError(f"intent prevalences sum to {total:.3f} > 1")
        for it in self.intents:
            if it.prevalence <= 0:
                raise ConfigError(f"intent {it.name}: prevalence must be positive")
            if len(it.templates) < 3:
                raise ConfigError(f"intent {it.name}: needs at least 3 templates")
            if not it.keywords:
                raise ConfigError(f"intent {it.name}: needs a keyword pool")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ConfigError("noise_rate must be in [0, 1)")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in (0, 1)")

    def intent_named(self, name: str) -> IntentSpec:
        for it in self.intents:
            if it.name == name:
                return it
        raise ConfigError(f"unknown intent {name!r}; known: {[it.name for it in self.intents]}")


@dataclass
class SyntheticWorld:
    spec: SyntheticSpec
    corpus: Corpus
    test_set: TestSet
    truth: dict[str, set[int]]  # intent name -> positive train utterance ids


def generate_corpus(spec: SyntheticSpec) -> SyntheticWorld:
    """Render a seeded template world and split it into train corpus + test set.

    The split is disjoint at the text level: test rows whose text also occurs
    in the train corpus are discarded rather than leaked.
    """
    n_test = round(spec.n_utterances * spec.test_fraction)
    for it in spec.intents:
        expected_positives = it.prevalence * spec.n_utterances * spec.test_fraction
        if expected_positives < 5:
            raise ConfigError(
                f"intent {it.name}: expected {expected_positives:.1f} test positives "
                "(< 5); raise prevalence, corpus size, or test fraction"
            )
    rng = random.Random(spec.rng_seed)
    raw: list[tuple[str, str | None]] = []
    for _ in range(spec.n_utterances):
        r = rng.random()
        origin: IntentSpec | None = None
        acc = 0.0
        for it in spec.intents:
            acc += it.prevalence
            if r < acc:
                origin = it
                break
        if origin is not None:
            text = _fill(rng.choice(origin.templates), origin.keywords, rng)
        else:
            text = _fill(rng.choice(BACKGROUND_TEMPLATES), (), rng)
        if rng.random() < spec.noise_rate:
            donors = [it for it in spec.intents if origin is None or it.name != origin.name]
            if donors:
                donor = rng.choice(donors)
                text = f"{text} {rng.choice(donor.keywords)}"
        raw.append((text, origin.name if origin is not None else None))
    test_positions = set(rng.sample(range(spec.n_utterances), n_test))
    train_rows = [raw[i] for i in range(spec.n_utterances) if i not in test_positions]
    test_rows = [raw[i] for i in range(spec.n_utterances) if i in test_positions]

    corpus = ingest(
        (text for text, _ in train_rows),
        corpus_id=f"synthetic-{spec.rng_seed}",
        max_chars=spec.max_chars,
    )
    if len(corpus) != len(train_rows):
        raise ConfigError("synthetic templates produced texts outside ingestion limits")
    truth: dict[str, set[int]] = {it.name: set() for it in spec.intents}
    for uid, (_, origin_name) in enumerate(train_rows):
        if origin_name is not None:
            truth[origin_name].add(uid)

    train_texts = {text for text, _ in train_rows}
    seen: set[str] = set()
    rows: list[TestRow] = []
    for text, origin_name in test_rows:
        if text in train_texts or text in seen:
            continue
        seen.add(text)
        for it in spec.intents:
            rows.append(TestRow(text, it.name, 1 if origin_name == it.name else -1))
    test_set = TestSet(rows=rows, source=f"synthetic-{spec.rng_seed}")
    return SyntheticWorld(spec=spec, corpus=corpus, test_set=test_set, truth=truth)


# --- oracle ---------------------------------------------------------------------


class OracleLabeler:
    """Scripted analyst: ground truth with seeded abstain and error noise."""

    def __init__(
        self,
        positives: set[int],
        error_rate: float = 0.05,
        abstain_rate: float = 0.05,
        seed: int = 0,
    ):
        if not 0.0 <= error_rate < 1.0 or not 0.0 <= abstain_rate < 1.0:
            raise ConfigError("error_rate and abstain_rate must be in [0, 1)")
        if error_rate + abstain_rate >= 1.0:
            raise ConfigError("error_rate + abstain_rate must stay below 1")
        self.positives = positives
        self.error_rate = error_rate
        self.abstain_rate = abstain_rate
        self._rng = random.Random(f"oracle:{seed}")

    def verdict(self, candidate_id: int) -> Verdict:
        r = self._rng.random()
        if r < self.abstain_rate:
            return Verdict.ABSTAIN
        truth = Verdict.IN if candidate_id in self.positives else Verdict.OUT
        if r < self.abstain_rate + self.error_rate:
            return Verdict.OUT if truth is Verdict.IN else Verdict.IN
        return truth


# --- budgets and runs -------------------------------------------------------------


@dataclass(frozen=True)
class Budget:
    mode: str
    max_queries: int
    max_labels: int

    def __post_init__(self) -> None:
        if self.mode not in (MODE_SLP, MODE_LABEL_ONLY):
            raise ConfigError(f"unknown budget mode {self.mode!r}")
        if self.max_queries < 1 or self.max_labels < 1:
            raise ConfigError("budget needs at least one query and one label")


DEFAULT_SLP_BUDGET = Budget(MODE_SLP, max_queries=9, max_labels=79)
DEFAULT_LABEL_ONLY_BUDGET = Budget(MODE_LABEL_ONLY, max_queries=5, max_labels=77)


@dataclass
class RunResult:
    mode: str
    intent: str
    seed: int
    n_queries: int
    n_strong: int
    n_weak: int
    degenerate: bool
    metrics: dict[str, Metrics]
    script_text: str
    marginals_text: str | None = None
    weak_marginal_values: list[float] = field(default_factory=list)


def _constant_metrics(label: int, test_set: TestSet, intent: str) -> Metrics:
    rows = test_set.rows_for(intent)
    tp = sum(1 for r in rows if r.label > 0 and label > 0)
    fn = sum(1 for r in rows if r.label > 0 and label < 0)
    fp = sum(1 for r in rows if r.label < 0 and label > 0)
    tn = sum(1 for r in rows if r.label < 0 and label < 0)
    return Metrics.from_confusion(tp=tp, fp=fp, tn=tn, fn=fn)


def _train_eval_strong(
    strong_labels: Mapping[int, int],
    corpus: Corpus,
    featurizer: TfidfFeaturizer,
    test_set: TestSet,
    intent: str,
    forest: ForestHyperparams,
) -> tuple[Metrics, bool]:
    if not strong_labels:
        return _constant_metrics(-1, test_set, intent), True
    texts, labels = strong_training_set(strong_labels, corpus)
    if set(labels) != {-1, 1}:
        return _constant_metrics(labels[0], test_set, intent), True
    model = train_classifier(featurizer.transform(texts), labels, forest)
    return evaluate(model, featurizer, test_set, intent), False


def _train_eval_weak(
    marginal_values: Mapping[int, float],
    corpus: Corpus,
    featurizer: TfidfFeaturizer,
    test_set: TestSet,
    intent: str,
    forest: ForestHyperparams,
) -> tuple[Metrics, bool]:
    if len(marginal_values) < 2:
        only = next(iter(marginal_values.values()), 0.0)
        return _constant_metrics(1 if only >= 0.5 else -1, test_set, intent), True
    texts, targets = weak_training_set(marginal_values, corpus)
    model = train_regressor(featurizer.transform(texts), targets, forest)
    return evaluate(model, featurizer, test_set, intent), False


def run_experiment(
    world: SyntheticWorld,
    intent: str,
    budget: Budget,
    oracle: OracleLabeler,
    session_config: SessionConfig,
    forest: ForestHyperparams | None = None,
    queries: Sequence[str] | None = None,
    index: InvertedIndex | None = None,
    featurizer: TfidfFeaturizer | None = None,
) -> RunResult:
    """One budgeted labeling run; returns metrics plus the full run log."""
    spec_intent = world.spec.intent_named(intent)
    if queries is None:
        # label-only analysts hunt positives; slp analysts also probe negatives.
        if budget.mode == MODE_LABEL_ONLY and spec_intent.label_queries:
            queries = spec_intent.label_queries
        else:
            queries = spec_intent.queries
    queries = list(queries)
    if not queries:
        raise ConfigError(f"intent {intent!r} has no query script")
    forest = forest or ForestHyperparams()
    if session_config.mode != budget.mode:
        session_config = dataclasses.replace(session_config, mode=budget.mode)
    index = index if index is not None else build_index(world.corpus)
    featurizer = featurizer if featurizer is not None else fit_tfidf(world.corpus)

    session = Session(world.corpus, index, intent, session_config)
    run_queries = queries[: budget.max_queries]
    # slp spreads the label budget evenly so every round can propagate;
    # label_only burns through pages greedily, top ranks first.
    base, extra = divmod(budget.max_labels, len(run_queries))
    labels_used = 0
    for qi, raw_query in enumerate(run_queries):
        round_ = session.run_query(raw_query)
        if budget.mode == MODE_SLP:
            quota = base + (1 if qi < extra else 0)
            candidates = round_.displayed[:quota]
        else:
            per_query = min(session_config.min_labels_per_query, len(round_.neighborhood))
            candidates = round_.neighborhood.ids()[:per_query]
        for cid in candidates:
            if labels_used >= budget.max_labels:
                break
            session.record_verdict(round_.query_id, cid, oracle.verdict(cid))
            labels_used += 1
    # A script can burn its whole budget on queries that match nothing; the
    # run is then degenerate but must still report (constant-negative) metrics.
    result = session.finalize() if any(r.verdicts for r in session.rounds) else None
    strong_labels = result.strong_labels if result else {}

    metrics: dict[str, Metrics] = {}
    degenerate = False
    marginals_text = None
    weak_values: list[float] = []
    if budget.mode == MODE_SLP:
        if result is not None:
            matrix, params, marginal_values = marginals_for_session(session)
            marginals_text = format_marginals(marginal_values, matrix.anchor.keys())
            weak_values = [p for cid, p in marginal_values.items() if cid not in matrix.anchor]
        else:
            marginal_values = {}
        metrics["strong"], degenerate_strong = _train_eval_strong(
            strong_labels, world.corpus, featurizer, world.test_set, intent, forest
        )
        metrics["weak"], degenerate_weak = _train_eval_weak(
            marginal_values, world.corpus, featurizer, world.test_set, intent, forest
        )
        degenerate = degenerate_strong or degenerate_weak
    else:
        metrics["label_only"], degenerate = _train_eval_strong(
            strong_labels, world.corpus, featurizer, world.test_set, intent, forest
        )
    return RunResult(
        mode=budget.mode,
        intent=intent,
        seed=world.spec.rng_seed,
        n_queries=len(session.rounds),
        n_strong=result.n_strong if result else 0,
        n_weak=result.n_weak if result else 0,
        degenerate=degenerate,
        metrics=metrics,
        script_text=session.script_text(),
        marginals_text=marginals_text,
        weak_marginal_values=weak_values,
    )


# --- A/B orchestration -------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    intent: str = "refund"
    n_utterances: int = 10_000
    prevalence: float = 0.04
    noise_rate: float = 0.02
    test_fraction: float = 0.1
    error_rate: float = 0.05
    abstain_rate: float = 0.05
    seeds: tuple[int, ...] = tuple(range(10))
    neighborhood_size: int = 100
    display_size: int = 10
    threshold: float = 0.6
    threshold_strict: bool = False
    class_prior: float = 0.5
    use_dependencies: bool = False
    slp_max_queries: int = 9
    slp_max_labels: int = 79
    label_only_max_queries: int = 5
    label_only_max_labels: int = 77
    n_trees: int = 100
    forest_seed: int = 0

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigError("at least one seed is required")

    def synthetic_spec(self, seed: int) -> SyntheticSpec:
        intents = []
        found = False
        for it in DEFAULT_INTENTS:
            if it.name == self.intent:
                intents.append(dataclasses.replace(it, prevalence=self.prevalence))
                found = True
            else:
                intents.append(it)
        if not found:
            raise ConfigError(
                f"unknown intent {self.intent!r}; known: {[it.name for it in DEFAULT_INTENTS]}"
            )
        return SyntheticSpec(
            n_utterances=self.n_utterances,
            intents=tuple(intents),
            noise_rate=self.noise_rate,
            test_fraction=self.test_fraction,
            rng_seed=seed,
        )

    def session_config(self, mode: str, seed: int) -> SessionConfig:
        return SessionConfig(
            mode=mode,
            neighborhood_size=self.neighborhood_size,
            display_size=self.display_size,
            threshold=self.threshold,
            threshold_strict=self.threshold_strict,
            rng_seed=seed + 1000,
            class_prior=self.class_prior,
            use_dependencies=self.use_dependencies,
        )

    def budgets(self) -> tuple[Budget, Budget]:
        return (
            Budget(MODE_SLP, self.slp_max_queries, self.slp_max_labels),
            Budget(MODE_LABEL_ONLY, self.label_only_max_queries, self.label_only_max_labels),
        )

    def forest(self) -> ForestHyperparams:
        return ForestHyperparams(n_trees=self.n_trees, seed=self.forest_seed)


@dataclass
class AbResult:
    config: ExperimentConfig
    slp_runs: list[RunResult]
    label_only_runs: list[RunResult]

    def aggregate_rows(self) -> list[ResultRow]:
        def metric_aggs(metrics_list: list[Metrics]) -> dict[str, Aggregate]:
            return {
                c: Aggregate.of([getattr(m, c) for m in metrics_list])
                for c in METRIC_COLUMNS
            }

        lo = self.label_only_runs
        slp = self.slp_runs
        rows = [
            ResultRow(
                name="label_only",
                n_query=Aggregate.of([float(r.n_queries) for r in lo]),
                n_label=Aggregate.of([float(r.n_strong) for r in lo]),
                metrics=metric_aggs([r.metrics["label_only"] for r in lo]),
            ),
            ResultRow(
                name="slp_strong",
                n_query=Aggregate.of([float(r.n_queries) for r in slp]),
                n_label=Aggregate.of([float(r.n_strong) for r in slp]),
                metrics=metric_aggs([r.metrics["strong"] for r in slp]),
            ),
            ResultRow(
                name="slp_weak",
                n_query=Aggregate.of([float(r.n_queries) for r in slp]),
                n_label=Aggregate.of([float(r.n_weak) for r in slp]),
                metrics=metric_aggs([r.metrics["weak"] for r in slp]),
            ),
        ]
        return rows

    def per_seed_details(self) -> list[dict]:
        details = []
        for run in self.label_only_runs:
            detail = {
                "strategy": "label_only",
                "seed": run.seed,
                "n_query": run.n_queries,
                "n_label": run.n_strong,
                "degenerate": run.degenerate,
            }
            detail.update({c: getattr(run.metrics["label_only"], c) for c in METRIC_COLUMNS})
            details.append(detail)
        for run in self.slp_runs:
            for strategy, key, n_label in (
                ("slp_strong", "strong", run.n_strong),
                ("slp_weak", "weak", run.n_weak),
            ):
                detail = {
                    "strategy": strategy,
                    "seed": run.seed,
                    "n_query": run.n_queries,
                    "n_label": n_label,
                    "degenerate": run.degenerate,
                }
                detail.update({c: getattr(run.metrics[key], c) for c in METRIC_COLUMNS})
                details.append(detail)
        return details


def run_ab(config: ExperimentConfig) -> AbResult:
    """Run both strategies on a fresh world per seed, sharing index and features."""
    slp_budget, label_only_budget = config.budgets()
    forest = config.forest()
    slp_runs: list[RunResult] = []
    label_only_runs: list[RunResult] = []
    for seed in config.seeds:
        world = generate_corpus(config.synthetic_spec(seed))
        index = build_index(world.corpus)
        featurizer = fit_tfidf(world.corpus)
        positives = world.truth[config.intent]
        slp_runs.append(
            run_experiment(
                world,
                config.intent,
                slp_budget,
                OracleLabeler(positives, config.error_rate, config.abstain_rate, seed=seed + 2000),
                config.session_config(MODE_SLP, seed),
                forest=forest,
                index=index,
                featurizer=featurizer,
            )
        )
        label_only_runs.append(
            run_experiment(
                world,
                config.intent,
                label_only_budget,
                OracleLabeler(positives, config.error_rate, config.abstain_rate, seed=seed + 3000),
                config.session_config(MODE_LABEL_ONLY, seed),
                forest=forest,
                index=index,
                featurizer=featurizer,
            )
        )
    return AbResult(config=config, slp_runs=slp_runs, label_only_runs=label_only_runs)


# --- reports -------------------------------------------------------------------------


def write_experiment_report(result: AbResult, outdir: str | Path) -> dict[str, Path]:
    """Write delimited results, the aligned table, figures, and per-run logs."""
    from . import report

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = result.aggregate_rows()
    paths: dict[str, Path] = {}
    paths["csv"] = report.write_results_csv(rows, result.per_seed_details(), outdir / "results.csv")
    table = report.results_table(rows)
    (outdir / "results.txt").write_text(table, encoding="utf-8")
    paths["table"] = outdir / "results.txt"

    figures = outdir / "figures"
    paths["metrics_figure"] = report.render_metrics_figure(rows, figures / "metrics_by_mode.png")
    paths["scatter_figure"] = report.render_seed_scatter(
        [r.metrics["strong"].accuracy for r in result.slp_runs],
        [r.metrics["weak"].accuracy for r in result.slp_runs],
        [r.metrics["strong"].precision_pos for r in result.slp_runs],
        [r.metrics["weak"].precision_pos for r in result.slp_runs],
        figures / "weak_vs_strong.png",
    )
    histogram_values = next(
        (r.weak_marginal_values for r in result.slp_runs if r.weak_marginal_values), None
    )
    if histogram_values:
        paths["histogram_figure"] = report.render_marginal_histogram(
            histogram_values, figures / "marginal_histogram.png"
        )

    for run in result.slp_runs + result.label_only_runs:
        run_dir = outdir / "runs" / f"seed{run.seed}" / run.mode
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "script.jsonl").write_text(run.script_text, encoding="utf-8")
        if run.marginals_text is not None:
            (run_dir / "marginals.csv").write_text(run.marginals_text, encoding="utf-8")
        payload = {
            key: metric.to_dict() | {"n_queries": run.n_queries, "n_strong": run.n_strong,
                                     "n_weak": run.n_weak, "degenerate": run.degenerate}
            for key, metric in run.metrics.items()
        }
        (run_dir / "metrics.json").write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    return paths


# --- parameter sweeps -----------------------------------------------------------------


def run_sweep(
    config: ExperimentConfig, grid: Mapping[str, Sequence]
) -> list[tuple[dict, AbResult]]:
    """Cartesian sweep over ExperimentConfig fields; one A/B per grid cell."""
    if not grid:
        raise ConfigError("sweep grid is empty")
    valid = set(ExperimentConfig.__dataclass_fields__)
    for key in grid:
        if key not in valid:
            raise ConfigError(f"unknown sweep parameter {key!r}")
        if key == "seeds":
            raise ConfigError("sweep over 'seeds' is not supported; set seeds once")
    keys = sorted(grid)
    cells: list[tuple[dict, AbResult]] = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        overrides = dict(zip(keys, combo))
        cell_config = dataclasses.replace(config, **overrides)
        cells.append((overrides, run_ab(cell_config)))
    return cells


def write_sweep_report(
    cells: Sequence[tuple[dict, AbResult]], outdir: str | Path
) -> dict[str, Path]:
    from . import report

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    sections = []
    csv_rows: list[ResultRow] = []
    per_seed: list[dict] = []
    for overrides, result in cells:
        label = ", ".join(f"{k}={v}" for k, v in sorted(overrides.items()))
        rows = result.aggregate_rows()
        for row in rows:
            csv_rows.append(dataclasses.replace(row, name=f"{row.name} [{label}]"))
        for detail in result.per_seed_details():
            detail = dict(detail)
            detail["strategy"] = f"{detail['strategy']} [{label}]"
            per_seed.append(detail)
        sections.append(f"== {label} ==\n{report.results_table(rows)}")
    paths = {
        "csv": report.write_results_csv(csv_rows, per_seed, outdir / "sweep.csv"),
        "table": outdir / "sweep.txt",
    }
    (outdir / "sweep.txt").write_text("\n".join(sections), encoding="utf-8")
    return paths


# --- config files -----------------------------------------------------------------------


def load_experiment_config(path: str | Path) -> tuple[ExperimentConfig, dict | None]:
    """Read an experiment config JSON; returns (config, optional sweep grid)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"experiment config not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path.name}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path.name}: expected a JSON object")
    data = dict(data)
    version = data.pop("v", 1)
    if version != 1:
        raise ConfigError(f"{path.name}: unsupported config version {version!r}")
    sweep = data.pop("sweep", None)
    if sweep is not None and not isinstance(sweep, dict):
        raise ConfigError(f"{path.name}: sweep must be an object of parameter lists")
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path.name}: unknown config keys {sorted(unknown)}")
    if "seeds" in data:
        data["seeds"] = tuple(data["seeds"])
    try:
        config = ExperimentConfig(**data)
    except TypeError as exc:
        raise ConfigError(f"{path.name}: {exc}") from exc
    return config, sweep
