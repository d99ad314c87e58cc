"""Acceptance gate: one test per top-level product criterion.

Run with `-v` to get one pass/fail line per criterion.  Each test carries its
own independent oracle (brute-force Bayes, finite differences, exhaustive
enumeration) rather than reusing package internals, and pins the agreed
tolerance and runtime budget.
"""

import json
import math
import random
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from slp.cli import main
from slp.harness import ExperimentConfig, run_ab
from slp.index import Hit, Neighborhood, build_index
from slp.corpus import ingest
from slp.labelmodel import (
    INIT_ACCURACY,
    GenerativeParams,
    LabelMatrix,
    fit_generative,
    log_likelihood,
    marginals,
)
from slp.queryparse import parse_query
from slp.service import create_app
from slp.session import PropagationDecision, QueryRound, Verdict, propagate


# --- label model: posterior equals brute-force Bayes -------------------------


def _random_instance(rng: random.Random) -> tuple[LabelMatrix, float]:
    m = rng.randint(2, 20)
    n_funcs = rng.randint(1, 4)
    rows = []
    for _ in range(n_funcs):
        row = {
            cid: rng.choice((-1, 1)) for cid in range(m) if rng.random() < 0.5
        }
        if not row:
            row[rng.randrange(m)] = 1
        rows.append(row)
    anchor = {
        cid: rng.choice((-1, 1)) for cid in range(m) if rng.random() < 0.2
    }
    prior = rng.uniform(0.2, 0.8)
    return LabelMatrix(n_candidates=m, rows=rows, anchor=anchor), prior


def _bayes_posterior(matrix: LabelMatrix, accuracy, prior: float) -> dict[int, float]:
    """Per-candidate enumeration over y in {-1, +1} in plain python floats."""
    out: dict[int, float] = {}
    covered = set(matrix.anchor)
    for row in matrix.rows:
        covered.update(row)
    for cid in covered:
        if cid in matrix.anchor:
            out[cid] = 1.0 if matrix.anchor[cid] > 0 else 0.0
            continue
        like = {1: prior, -1: 1.0 - prior}
        for i, row in enumerate(matrix.rows):
            if cid not in row:
                continue
            vote = row[cid]
            a = float(accuracy[i])
            like[1] *= a if vote == 1 else 1.0 - a
            like[-1] *= a if vote == -1 else 1.0 - a
        out[cid] = like[1] / (like[1] + like[-1])
    return out


def test_label_model_matches_bayes_enumeration():
    rng = random.Random(42)
    start = time.perf_counter()
    for _ in range(50):
        matrix, prior = _random_instance(rng)
        params = fit_generative(matrix, class_prior=prior)
        got = marginals(matrix, params)
        want = _bayes_posterior(matrix, params.accuracy, prior)
        assert got.keys() == want.keys()
        for cid in want:
            assert got[cid] == pytest.approx(want[cid], abs=1e-10)
    assert time.perf_counter() - start < 5.0


# --- label model: EM monotonicity and stationarity ---------------------------


def _planted_matrix(rng: random.Random) -> LabelMatrix:
    m = rng.randint(60, 500)
    n_funcs = rng.randint(2, 10)
    truth = [rng.choice((-1, 1)) for _ in range(m)]
    rows = []
    for _ in range(n_funcs):
        beta = rng.uniform(0.2, 0.6)
        alpha = rng.uniform(0.65, 0.9)
        row = {}
        for cid in range(m):
            if rng.random() < beta:
                row[cid] = truth[cid] if rng.random() < alpha else -truth[cid]
        if not row:
            row[rng.randrange(m)] = 1
        rows.append(row)
    anchor = {cid: truth[cid] for cid in rng.sample(range(m), k=10)}
    return LabelMatrix(n_candidates=m, rows=rows, anchor=anchor)


def _fd_gradient(matrix, accuracy, propensity, prior, i, h=1e-6) -> float:
    up, down = accuracy.copy(), accuracy.copy()
    up[i] += h
    down[i] -= h
    return (
        log_likelihood(matrix, up, propensity, prior)
        - log_likelihood(matrix, down, propensity, prior)
    ) / (2.0 * h)


def test_em_monotone_and_stationary():
    rng = random.Random(7)
    start = time.perf_counter()
    for _ in range(20):
        matrix = _planted_matrix(rng)
        params = fit_generative(matrix, max_iters=2000, tol=1e-12)
        assert params.converged
        diffs = np.diff(params.log_likelihoods)
        assert diffs.min() >= -1e-9
        for i, alpha in enumerate(params.accuracy):
            g = _fd_gradient(
                matrix, params.accuracy, params.propensity, params.class_prior, i
            )
            if alpha >= 0.99:  # clamped high: gradient may point outward
                assert g >= -1e-4
            elif alpha <= 0.01:
                assert g <= 1e-4
            else:
                assert abs(g) <= 1e-4
    assert time.perf_counter() - start < 30.0


# --- label model: closed-form checks ------------------------------------------


def test_closed_form_propensity_and_single_function():
    rng = random.Random(3)
    matrix, prior = _random_instance(rng)
    params = fit_generative(matrix, class_prior=prior)
    for i in range(matrix.n_functions):
        assert params.propensity[i] == matrix.coverage(i) / matrix.n_candidates

    # single function, no anchor, prior 0.5: likelihood is flat in alpha
    single = LabelMatrix(
        n_candidates=8, rows=[{0: 1, 1: -1, 2: 1, 3: 1, 4: -1}], anchor={}
    )
    lls = [
        log_likelihood(single, np.array([a]), class_prior=0.5)
        for a in (0.05, 0.2, 0.35, 0.5, 0.65, 0.8, 0.95)
    ]
    assert max(lls) - min(lls) <= 1e-12
    fitted = fit_generative(single, class_prior=0.5)
    assert fitted.accuracy[0] == pytest.approx(INIT_ACCURACY, abs=1e-9)

    # single +1 vote at accuracy 0.9, prior 0.5: marginal is 0.9
    one_vote = LabelMatrix(n_candidates=1, rows=[{0: 1}], anchor={})
    params = GenerativeParams(
        accuracy=np.array([0.9]),
        propensity=np.array([1.0]),
        anchor_propensity=0.0,
        class_prior=0.5,
    )
    assert marginals(one_vote, params)[0] == pytest.approx(0.9, abs=1e-12)


# --- propagation: exhaustive rule table for k=10 ------------------------------


def test_propagation_rule_exhaustive_k10():
    k, threshold = 10, 0.6
    neighborhood = Neighborhood(
        hits=[Hit(i, 1.0 - 0.01 * i) for i in range(30)], capacity=100, total_matches=30
    )
    checked = 0
    for n_in in range(k + 1):
        for n_out in range(k + 1 - n_in):
            n_abstain = k - n_in - n_out
            verdicts = {}
            for cid in range(n_in):
                verdicts[cid] = Verdict.IN
            for cid in range(n_in, n_in + n_out):
                verdicts[cid] = Verdict.OUT
            for cid in range(n_in + n_out, k):
                verdicts[cid] = Verdict.ABSTAIN
            round_ = QueryRound(
                query_id=0,
                raw_query="t",
                ast=parse_query("t"),
                neighborhood=neighborhood,
                displayed=list(range(k)),
                verdicts=verdicts,
            )
            outcome = propagate(round_, threshold)
            if n_in / k >= threshold:
                expected = PropagationDecision.PROPAGATE_IN
            elif n_out / k >= threshold:
                expected = PropagationDecision.PROPAGATE_OUT
            else:
                expected = PropagationDecision.NONE
            assert outcome.decision is expected, (n_in, n_out, n_abstain)
            if expected is not PropagationDecision.NONE:
                assert outcome.covered == tuple(range(k, 30))
            checked += 1
    assert checked == 66  # all verdict multisets summing to 10
    # the >= convention at the exact boundary
    boundary = QueryRound(
        query_id=0,
        raw_query="t",
        ast=parse_query("t"),
        neighborhood=neighborhood,
        displayed=list(range(k)),
        verdicts={cid: (Verdict.IN if cid < 6 else Verdict.OUT) for cid in range(k)},
    )
    assert propagate(boundary, threshold).decision is PropagationDecision.PROPAGATE_IN


# --- BM25: hand oracle plus randomized properties -----------------------------

ORACLE_DOCS = ["refund my card", "refund refund please", "schedule a meeting please"]
ORACLE_SCORES = {
    ("refund", 0): 0.4900511774126154,
    ("refund", 1): 0.664956903112938,
    ("refund", 2): 0.0,
    ("please", 2): 0.4344571362775708,
}


def test_bm25_oracle_and_randomized_properties():
    index = build_index(ingest(ORACLE_DOCS))
    for (term, doc), expected in ORACLE_SCORES.items():
        assert index.bm25_score([term], doc) == pytest.approx(expected, abs=1e-9)

    vocab = ["alpha", "beta", "gamma", "delta", "echo", "fox",
             "golf", "hotel", "india", "juliet", "kilo", "lima"]
    rng = random.Random(99)
    for _ in range(1000):
        n_docs = rng.randint(2, 50)
        docs = [
            " ".join(rng.choice(vocab) for _ in range(rng.randint(1, 12)))
            for _ in range(n_docs)
        ]
        corpus = ingest(docs)
        index = build_index(corpus)
        term = rng.choice(docs[rng.randrange(n_docs)].split())

        # same-length docs: score is non-decreasing in tf (strict when idf > 0)
        lengths = [len(d.split()) for d in docs]
        tfs = [d.split().count(term) for d in docs]
        scores = [index.bm25_score([term], i) for i in range(n_docs)]
        strict = index.idf(term) > 0.0
        for a in range(n_docs):
            for b in range(n_docs):
                if lengths[a] != lengths[b]:
                    continue
                if tfs[a] > tfs[b]:
                    assert scores[a] >= scores[b]
                    if strict:
                        assert scores[a] > scores[b]
                elif tfs[a] == tfs[b]:
                    assert scores[a] == scores[b]

        # top-N is a prefix of top-M for N < M
        ast = parse_query(term)
        small = rng.randint(1, 10)
        narrow = index.search(ast, small).hits
        wide = index.search(ast, 50).hits
        assert [(h.utterance_id, h.score) for h in narrow] == [
            (h.utterance_id, h.score) for h in wide[: len(narrow)]
        ]


# --- synthetic harness: directional trend, determinism ------------------------


@pytest.fixture(scope="module")
def default_ab():
    start = time.perf_counter()
    result = run_ab(ExperimentConfig())
    return result, time.perf_counter() - start


def test_directional_trend_over_ten_seeds(default_ab):
    result, elapsed = default_ab
    assert len(result.slp_runs) == 10
    acc_wins = sum(
        1
        for r in result.slp_runs
        if r.metrics["weak"].accuracy > r.metrics["strong"].accuracy
    )
    prec_wins = sum(
        1
        for r in result.slp_runs
        if (r.metrics["weak"].precision_pos or 0.0)
        > (r.metrics["strong"].precision_pos or 0.0)
    )
    assert acc_wins >= 8, f"weak beat strong on accuracy in only {acc_wins}/10 runs"
    assert prec_wins >= 8, f"weak beat strong on precision(+) in only {prec_wins}/10 runs"

    mean = lambda xs: sum(xs) / len(xs)
    label_only_acc = mean([r.metrics["label_only"].accuracy for r in result.label_only_runs])
    weak_acc = mean([r.metrics["weak"].accuracy for r in result.slp_runs])
    strong_acc = mean([r.metrics["strong"].accuracy for r in result.slp_runs])
    assert weak_acc > label_only_acc
    assert strong_acc > label_only_acc
    assert elapsed < 600.0, f"ten-seed harness took {elapsed:.1f}s"


def test_determinism_byte_identical(default_ab):
    first, _ = default_ab
    second = run_ab(ExperimentConfig())
    for a, b in zip(
        first.slp_runs + first.label_only_runs,
        second.slp_runs + second.label_only_runs,
    ):
        assert a.script_text.encode() == b.script_text.encode()
        if a.marginals_text is not None or b.marginals_text is not None:
            assert a.marginals_text.encode() == b.marginals_text.encode()
        assert a.metrics == b.metrics


# --- replay equivalence: service-recorded script through the CLI --------------

REPLAY_DOCS = [f"i want a refund for order {1000 + i} please" for i in range(15)] + [
    f"refund the {obj} i bought on {day} the refund is overdue"
    for obj in ("lamp", "kettle", "charger")
    for day in ("monday", "tuesday", "wednesday", "thursday", "friday")
] + [f"what a lovely {w} day outside today" for w in ("sunny", "rainy", "windy")] * 5


def test_cli_replay_of_service_script(tmp_path):
    client = TestClient(create_app())
    assert client.post(
        "/corpora", json={"corpus_id": "demo", "utterances": REPLAY_DOCS}
    ).status_code == 201
    assert client.post("/corpora/demo/index").status_code == 200
    sid = client.post(
        "/sessions",
        json={"corpus_id": "demo", "intent": "refund", "config": {"rng_seed": 11}},
    ).json()["session_id"]
    shown = client.post(f"/sessions/{sid}/queries", json={"q": "refund"}).json()
    for hit in shown["displayed"]:
        resp = client.post(
            f"/sessions/{sid}/verdicts",
            json={"query_id": 0, "candidate_id": hit["candidate_id"], "verdict": "in"},
        )
        assert resp.status_code == 200
    assert client.post(f"/sessions/{sid}/finalize").status_code == 200
    script = client.get(f"/sessions/{sid}/export", params={"what": "script"}).text
    service_marginals = client.get(
        f"/sessions/{sid}/export", params={"what": "marginals"}
    ).text

    corpus_file = tmp_path / "demo.ndjson"
    corpus_file.write_text(
        "".join(
            json.dumps({"id": i, "text": t}) + "\n" for i, t in enumerate(REPLAY_DOCS)
        ),
        encoding="utf-8",
    )
    script_file = tmp_path / "session.jsonl"
    script_file.write_text(script, encoding="utf-8")
    out = tmp_path / "out"
    assert main(
        ["session", "--script", str(script_file), "--corpus", str(corpus_file),
         "--out", str(out)]
    ) == 0
    assert (out / "marginals.csv").read_bytes() == service_marginals.encode()
