import random

import pytest

from slp.corpus import ingest
from slp.errors import ReplayError, SessionError
from slp.index import build_index
from slp.session import (
    MODE_LABEL_ONLY,
    MODE_SLP,
    PropagationDecision,
    Session,
    SessionConfig,
    Verdict,
    paginate,
    propagate,
    read_script,
    replay,
    sample_display,
    tier_sizes,
)


def make_world(n_refund=120, n_other=30):
    """Corpus where the query `refund` returns n_refund hits with varied scores."""
    texts = []
    for i in range(n_refund):
        # Vary tf and length so scores spread out across tiers.
        extra = "refund " * (i % 3)
        filler = " ".join(f"w{i}x{j}" for j in range(i % 7))
        texts.append(f"{extra}refund order {i} {filler}".strip())
    for i in range(n_other):
        texts.append(f"totally unrelated chatter {i}")
    corpus = ingest(texts)
    return corpus, build_index(corpus)


@pytest.fixture(scope="module")
def world():
    return make_world()


class TestTierSizes:
    def test_exact_thirds(self):
        assert tier_sizes(99) == (33, 33, 33)

    def test_remainder_goes_top_first(self):
        assert tier_sizes(100) == (34, 33, 33)
        assert tier_sizes(101) == (34, 34, 33)

    def test_display_quotas(self):
        assert tier_sizes(10) == (4, 3, 3)
        assert tier_sizes(11) == (4, 4, 3)


class TestSampleDisplay:
    def _hits(self, n):
        corpus, index = make_world(n_refund=n)
        from slp.queryparse import parse_query

        return index.search(parse_query("refund"), capacity=n).hits

    def test_small_neighborhood_returns_everything(self):
        hits = self._hits(7)
        got = sample_display(hits, 10, random.Random(0))
        assert got == [h.utterance_id for h in hits]

    def test_quota_split_over_100_hits(self):
        hits = self._hits(120)[:100]
        rank = {h.utterance_id: i for i, h in enumerate(hits)}
        for seed in range(25):
            got = sample_display(hits, 10, random.Random(seed))
            assert len(got) == 10
            ranks = [rank[uid] for uid in got]
            assert sum(1 for r in ranks if r < 34) == 4
            assert sum(1 for r in ranks if 34 <= r < 67) == 3
            assert sum(1 for r in ranks if r >= 67) == 3

    def test_output_preserves_score_order(self):
        hits = self._hits(120)[:100]
        rank = {h.utterance_id: i for i, h in enumerate(hits)}
        got = sample_display(hits, 10, random.Random(3))
        assert [rank[uid] for uid in got] == sorted(rank[uid] for uid in got)

    def test_no_replacement(self):
        hits = self._hits(120)[:100]
        got = sample_display(hits, 10, random.Random(5))
        assert len(set(got)) == 10

    def test_deterministic_under_seed(self):
        hits = self._hits(120)[:100]
        a = sample_display(hits, 10, random.Random(9))
        b = sample_display(hits, 10, random.Random(9))
        assert a == b


class _FakeRound:
    """Bare-bones stand-in so propagate() can be exercised exhaustively."""

    def __init__(self, n_in, n_out, n_abstain, n_displayed=None, n_hits=30):
        from slp.index import Hit, Neighborhood

        self.query_id = 0
        displayed_n = n_displayed if n_displayed is not None else n_in + n_out + n_abstain
        hits = [Hit(uid, 1.0) for uid in range(n_hits)]
        self.neighborhood = Neighborhood(hits=hits, capacity=100, total_matches=n_hits)
        self.displayed = list(range(displayed_n))
        self.verdicts = {}
        uid = 0
        for _ in range(n_in):
            self.verdicts[uid] = Verdict.IN
            uid += 1
        for _ in range(n_out):
            self.verdicts[uid] = Verdict.OUT
            uid += 1
        for _ in range(n_abstain):
            self.verdicts[uid] = Verdict.ABSTAIN
            uid += 1

    def verdict_counts(self):
        n_in = sum(1 for v in self.verdicts.values() if v is Verdict.IN)
        n_out = sum(1 for v in self.verdicts.values() if v is Verdict.OUT)
        return n_in, n_out, len(self.verdicts) - n_in - n_out


class TestPropagate:
    def test_worked_example(self):
        # 8 In, 1 Out, 1 Abstain of 10 displayed: 0.8 >= 0.6 propagates In.
        outcome = propagate(_FakeRound(8, 1, 1), threshold=0.6)
        assert outcome.decision is PropagationDecision.PROPAGATE_IN

    def test_boundary_is_inclusive(self):
        outcome = propagate(_FakeRound(6, 4, 0), threshold=0.6)
        assert outcome.decision is PropagationDecision.PROPAGATE_IN

    def test_strict_option_excludes_boundary(self):
        outcome = propagate(_FakeRound(6, 4, 0), threshold=0.6, strict=True)
        assert outcome.decision is PropagationDecision.NONE

    def test_out_majority(self):
        outcome = propagate(_FakeRound(1, 8, 1), threshold=0.6)
        assert outcome.decision is PropagationDecision.PROPAGATE_OUT

    def test_split_verdicts_no_propagation(self):
        outcome = propagate(_FakeRound(5, 5, 0), threshold=0.6)
        assert outcome.decision is PropagationDecision.NONE
        assert outcome.covered == ()

    def test_abstains_stay_in_denominator(self):
        # 5 In, 0 Out, 5 Abstain: 5/10 < 0.6, no propagation.
        outcome = propagate(_FakeRound(5, 0, 5), threshold=0.6)
        assert outcome.decision is PropagationDecision.NONE

    def test_unverdicted_displayed_stay_in_denominator(self):
        # 6 In out of 10 displayed, 4 without any verdict: still propagates,
        # and the 4 unverdicted displayed candidates are covered.
        outcome = propagate(_FakeRound(6, 0, 0, n_displayed=10), threshold=0.6)
        assert outcome.decision is PropagationDecision.PROPAGATE_IN
        assert set(range(6, 10)).issubset(set(outcome.covered))

    def test_covered_excludes_all_verdicted_including_abstain(self):
        outcome = propagate(_FakeRound(7, 1, 2, n_hits=30), threshold=0.6)
        assert set(outcome.covered) == set(range(10, 30))

    def test_exhaustive_k10_verdict_multisets(self):
        for n_in in range(11):
            for n_out in range(11 - n_in):
                n_abstain = 10 - n_in - n_out
                if n_in + n_out + n_abstain == 0:
                    continue
                outcome = propagate(_FakeRound(n_in, n_out, n_abstain), threshold=0.6)
                if n_in / 10 >= 0.6:
                    expected = PropagationDecision.PROPAGATE_IN
                elif n_out / 10 >= 0.6:
                    expected = PropagationDecision.PROPAGATE_OUT
                else:
                    expected = PropagationDecision.NONE
                assert outcome.decision is expected, (n_in, n_out, n_abstain)

    def test_requires_at_least_one_verdict(self):
        with pytest.raises(SessionError, match="no verdicts"):
            propagate(_FakeRound(0, 0, 0), threshold=0.6)

    def test_order_invariance(self, world):
        corpus, index = world
        config = SessionConfig(rng_seed=4)
        orders = []
        for order_seed in (0, 1, 2):
            session = Session(corpus, index, "refund", config)
            round_ = session.run_query("refund")
            pairs = [(uid, Verdict.IN if i < 7 else Verdict.OUT) for i, uid in enumerate(round_.displayed)]
            random.Random(order_seed).shuffle(pairs)
            for uid, verdict in pairs:
                session.record_verdict(0, uid, verdict)
            outcome = session.round_outcome(round_)
            orders.append((outcome.decision, outcome.covered))
        assert orders[0] == orders[1] == orders[2]


class TestPaginate:
    def test_pages_slice_in_score_order(self, world):
        corpus, index = world
        from slp.queryparse import parse_query

        nb = index.search(parse_query("refund"), capacity=100)
        page1 = paginate(nb, 1, 10)
        page2 = paginate(nb, 2, 10)
        assert page1 == nb.hits[:10]
        assert page2 == nb.hits[10:20]

    def test_past_the_end_is_empty(self, world):
        corpus, index = world
        from slp.queryparse import parse_query

        nb = index.search(parse_query("refund"), capacity=100)
        assert paginate(nb, 99, 10) == []

    def test_page_must_be_positive(self, world):
        corpus, index = world
        from slp.queryparse import parse_query

        nb = index.search(parse_query("refund"), capacity=100)
        with pytest.raises(SessionError):
            paginate(nb, 0, 10)


class TestSessionConfig:
    def test_defaults(self):
        config = SessionConfig()
        assert config.neighborhood_size == 100
        assert config.display_size == 10
        assert config.threshold == 0.6

    def test_display_larger_than_neighborhood_rejected(self):
        with pytest.raises(SessionError):
            SessionConfig(neighborhood_size=5, display_size=10)

    def test_threshold_range(self):
        with pytest.raises(SessionError):
            SessionConfig(threshold=0.0)
        with pytest.raises(SessionError):
            SessionConfig(threshold=1.2)

    def test_unknown_mode(self):
        with pytest.raises(SessionError):
            SessionConfig(mode="bulk")

    def test_roundtrip_dict(self):
        config = SessionConfig(rng_seed=5, threshold=0.7, mode=MODE_LABEL_ONLY)
        assert SessionConfig.from_dict(config.to_dict()) == config


class TestSessionFlow:
    def test_slp_display_is_sampled_to_k(self, world):
        corpus, index = world
        session = Session(corpus, index, "refund", SessionConfig(rng_seed=1))
        round_ = session.run_query("refund")
        assert len(round_.displayed) == 10
        assert len(round_.neighborhood) == 100

    def test_label_only_displays_whole_neighborhood(self, world):
        corpus, index = world
        session = Session(corpus, index, "refund", SessionConfig(mode=MODE_LABEL_ONLY))
        round_ = session.run_query("refund")
        assert round_.displayed == round_.neighborhood.ids()
        assert session.instructions() == {"min_labels_per_query": 20}

    def test_slp_verdict_requires_displayed_membership(self, world):
        corpus, index = world
        session = Session(corpus, index, "refund", SessionConfig(rng_seed=1))
        round_ = session.run_query("refund")
        outside = next(uid for uid in round_.neighborhood.ids() if uid not in round_.displayed)
        with pytest.raises(SessionError, match="displayed"):
            session.record_verdict(0, outside, Verdict.IN)

    def test_label_only_verdict_anywhere_in_neighborhood(self, world):
        corpus, index = world
        session = Session(corpus, index, "refund", SessionConfig(mode=MODE_LABEL_ONLY))
        round_ = session.run_query("refund")
        last = round_.neighborhood.ids()[-1]
        assert session.record_verdict(0, last, Verdict.IN)

    def test_unknown_query_id(self, world):
        corpus, index = world
        session = Session(corpus, index, "refund", SessionConfig())
        with pytest.raises(SessionError, match="unknown query id"):
            session.record_verdict(3, 0, Verdict.IN)

    def test_bad_verdict_token(self, world):
        corpus, index = world
        session = Session(corpus, index, "refund", SessionConfig(rng_seed=1))
        round_ = session.run_query("refund")
        with pytest.raises(SessionError, match="unknown verdict"):
            session.record_verdict(0, round_.displayed[0], "yes")

    def test_idempotent_repeat_returns_false(self, world):
        corpus, index = world
        session = Session(corpus, index, "refund", SessionConfig(rng_seed=1))
        round_ = session.run_query("refund")
        uid = round_.displayed[0]
        assert session.record_verdict(0, uid, Verdict.IN) is True
        assert session.record_verdict(0, uid, Verdict.IN) is False
        assert len(session.script_records()) == 3  # header + query + one verdict

    def test_latest_nonabstain_wins_across_rounds(self, world):
        corpus, index = world
        session = Session(corpus, index, "refund", SessionConfig(rng_seed=2))
        r0 = session.run_query("refund")
        uid = r0.displayed[0]
        session.record_verdict(0, uid, Verdict.IN)
        r1 = session.run_query("refund order")
        if uid in r1.displayed:
            session.record_verdict(1, uid, Verdict.OUT)
            assert session.strong_labels()[uid] == -1
        session.record_verdict(0, uid, Verdict.OUT)
        assert session.strong_labels()[uid] == -1

    def test_abstain_does_not_erase_strong_label(self, world):
        corpus, index = world
        session = Session(corpus, index, "refund", SessionConfig(rng_seed=2))
        round_ = session.run_query("refund")
        uid = round_.displayed[0]
        session.record_verdict(0, uid, Verdict.IN)
        session.record_verdict(0, uid, Verdict.ABSTAIN)
        assert session.strong_labels()[uid] == 1

    def test_abstain_only_candidate_has_no_strong_label(self, world):
        corpus, index = world
        session = Session(corpus, index, "refund", SessionConfig(rng_seed=2))
        round_ = session.run_query("refund")
        session.record_verdict(0, round_.displayed[0], Verdict.ABSTAIN)
        assert session.strong_labels() == {}

    def test_finalize_builds_functions_and_freezes(self, world):
        corpus, index = world
        session = Session(corpus, index, "refund", SessionConfig(rng_seed=3))
        round_ = session.run_query("refund")
        for uid in round_.displayed[:7]:
            session.record_verdict(0, uid, Verdict.IN)
        for uid in round_.displayed[7:]:
            session.record_verdict(0, uid, Verdict.OUT)
        result = session.finalize()
        assert len(result.functions) == 1
        fn = result.functions[0]
        assert fn.label == 1
        assert len(fn.covered) == 90
        assert result.n_strong == 10
        assert result.n_weak == 90
        assert session.counters() == {"queries": 1, "strong_labels": 10, "weak_labels": 90}
        with pytest.raises(SessionError, match="finalized"):
            session.run_query("more")
        with pytest.raises(SessionError, match="finalized"):
            session.record_verdict(0, round_.displayed[0], Verdict.OUT)

    def test_finalize_without_verdicts_rejected(self, world):
        corpus, index = world
        session = Session(corpus, index, "refund", SessionConfig())
        session.run_query("refund")
        with pytest.raises(SessionError, match="no verdicts"):
            session.finalize()

    def test_label_only_never_propagates(self, world):
        corpus, index = world
        session = Session(corpus, index, "refund", SessionConfig(mode=MODE_LABEL_ONLY))
        round_ = session.run_query("refund")
        for uid in round_.neighborhood.ids()[:20]:
            session.record_verdict(0, uid, Verdict.IN)
        result = session.finalize()
        assert result.functions == []
        assert result.n_strong == 20

    def test_mismatched_index_rejected(self, world):
        corpus, _ = world
        other_corpus, other_index = make_world(n_refund=10, n_other=2)
        with pytest.raises(SessionError, match="different corpus"):
            Session(corpus, other_index, "refund", SessionConfig())


class TestScriptReplay:
    def run_session(self, corpus, index):
        session = Session(corpus, index, "refund", SessionConfig(rng_seed=11))
        r0 = session.run_query("refund")
        for i, uid in enumerate(r0.displayed):
            session.record_verdict(0, uid, Verdict.IN if i < 8 else Verdict.ABSTAIN)
        r1 = session.run_query("unrelated chatter")
        for uid in r1.displayed[:7]:
            session.record_verdict(1, uid, Verdict.OUT)
        session.finalize()
        return session

    def test_replay_is_bit_identical(self, world, tmp_path):
        corpus, index = world
        session = self.run_session(corpus, index)
        path = session.write_script(tmp_path / "session.jsonl")
        replayed = replay(read_script(path), corpus, index)
        assert replayed.script_text() == session.script_text()
        assert replayed.strong_labels() == session.strong_labels()
        assert [r.displayed for r in replayed.rounds] == [r.displayed for r in session.rounds]
        fn_a = [(f.query_id, f.label, f.covered) for f in replayed.finalize_result.functions]
        fn_b = [(f.query_id, f.label, f.covered) for f in session.finalize_result.functions]
        assert fn_a == fn_b

    def test_replay_rejects_wrong_corpus(self, world):
        corpus, index = world
        session = self.run_session(corpus, index)
        other_corpus, other_index = make_world(n_refund=50, n_other=5)
        with pytest.raises(ReplayError, match="different corpus"):
            replay(session.script_records(), other_corpus, other_index)

    def test_replay_requires_header(self, world):
        corpus, index = world
        with pytest.raises(ReplayError, match="header"):
            replay([{"action": "query", "q": "x"}], corpus, index)

    def test_replay_reports_bad_record(self, world):
        corpus, index = world
        session = self.run_session(corpus, index)
        records = session.script_records()
        records.insert(2, {"action": "verdict", "query_id": 0, "candidate_id": -1, "verdict": "in"})
        with pytest.raises(ReplayError, match="record 3"):
            replay(records, corpus, index)

    def test_header_carries_config_and_fingerprint(self, world):
        corpus, index = world
        session = self.run_session(corpus, index)
        header = session.script_records()[0]
        assert header["corpus_fingerprint"] == corpus.fingerprint
        assert header["config"]["rng_seed"] == 11
        assert header["v"] == 1
