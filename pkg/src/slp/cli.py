"""Command-line front door for the labeling workbench.

Subcommands: ``index`` (build and cache a BM25 index), ``session`` (headless
script replay with marginal/label exports), ``train`` (fit a downstream
forest from exported labels), ``eval`` (score a persisted model), ``experiment``
(synthetic A/B harness with reports and figures), and ``serve`` (HTTP API).

Exit codes: 0 success, 1 anything the caller can fix (bad flags, missing
files, validation), 2 unexpected internal failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .corpus import Corpus, ingest_file, load_corpus, load_test_set
from .downstream import (
    ForestHyperparams,
    evaluate,
    fit_tfidf,
    load_model,
    save_model,
    strong_training_set,
    train_classifier,
    train_regressor,
    weak_training_set,
)
from .errors import ConfigError, CorpusError, SlpError
from .harness import (
    ExperimentConfig,
    load_experiment_config,
    run_ab,
    run_sweep,
    write_experiment_report,
    write_sweep_report,
)
from .index import build_index, load_index, save_index
from .labelmodel import format_marginals, marginals_for_session, parse_marginals
from .report import METRIC_COLUMNS, METRIC_HEADERS, results_table
from .session import MODE_SLP, read_script, replay


class _Parser(argparse.ArgumentParser):
    # the contract reserves exit code 2 for internal errors, so usage
    # problems exit 1 instead of argparse's default 2
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> _Parser:
    parser = _Parser(prog="slp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_index = sub.add_parser("index", help="build and cache a BM25 index for a corpus")
    p_index.add_argument("corpus", help="corpus file (.ndjson/.jsonl/.txt) or persisted directory")
    p_index.add_argument("--cache", help="index cache path (default: alongside the corpus)")
    p_index.add_argument("--json", action="store_true", help="machine-readable output")

    p_session = sub.add_parser("session", help="replay a session script headlessly")
    p_session.add_argument("--script", required=True, help="session script (.jsonl)")
    p_session.add_argument("--corpus", required=True, help="corpus file or directory")
    p_session.add_argument("--out", help="output directory (default: script's directory)")
    p_session.add_argument("--json", action="store_true")

    p_train = sub.add_parser("train", help="train a downstream forest from exported labels")
    p_train.add_argument("--corpus", required=True, help="corpus file or directory")
    p_train.add_argument(
        "--labels", required=True,
        help="labels export (strong: utterance_id,label) or marginals export (weak)",
    )
    p_train.add_argument("--mode", required=True, choices=("strong", "weak"))
    p_train.add_argument("--test", help="test set CSV (text,intent,label)")
    p_train.add_argument("--intent", help="intent to score (default: the test set's only intent)")
    p_train.add_argument("--model-out", help="persist the trained model here")
    p_train.add_argument("--threshold", type=float, default=0.5)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--trees", type=int, default=100)
    p_train.add_argument("--json", action="store_true")

    p_eval = sub.add_parser("eval", help="evaluate a persisted model on a test set")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--test", required=True)
    p_eval.add_argument("--intent")
    p_eval.add_argument("--threshold", type=float, default=0.5)
    p_eval.add_argument("--json", action="store_true")

    p_exp = sub.add_parser("experiment", help="run the synthetic A/B experiment harness")
    p_exp.add_argument("--config", help="experiment config JSON (defaults apply without it)")
    p_exp.add_argument("--out", default="experiment-out", help="report directory")
    p_exp.add_argument("--json", action="store_true")

    p_serve = sub.add_parser("serve", help="serve the HTTP API")
    p_serve.add_argument("--addr", default=None, help="host:port (default $SLP_ADDR or 127.0.0.1:8765)")
    p_serve.add_argument("--data-dir", default=None, help="persistence directory (default $SLP_DATA_DIR)")
    p_serve.add_argument("--async-jobs", action="store_true", help="finalize/train return 202 + poll")

    return parser


# --- shared helpers ---------------------------------------------------------


def _load_corpus_arg(path_str: str) -> Corpus:
    path = Path(path_str)
    if path.is_dir():
        return load_corpus(path)
    return ingest_file(path)


def _default_cache(path_str: str) -> Path:
    path = Path(path_str)
    return path / "index.pkl" if path.is_dir() else Path(f"{path}.index.pkl")


def _load_or_build_readonly(corpus: Corpus, corpus_arg: str):
    # opportunistic cache read; only `slp index` ever writes the cache
    cached = load_index(_default_cache(corpus_arg), corpus.fingerprint)
    return cached if cached is not None else build_index(corpus)


def _metrics_table(metrics) -> str:
    headers = [METRIC_HEADERS[c] for c in METRIC_COLUMNS]
    values = [
        "-" if getattr(metrics, c) is None else f"{getattr(metrics, c):.3f}"
        for c in METRIC_COLUMNS
    ]
    widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
    return (
        "  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()
        + "\n"
        + "  ".join(v.ljust(w) for v, w in zip(values, widths)).rstrip()
        + "\n"
    )


def _resolve_intent(test_set, requested: str | None) -> str:
    if requested:
        return requested
    intents = test_set.intents()
    if len(intents) != 1:
        raise ConfigError(
            f"test set covers intents {intents}; pick one with --intent"
        )
    return intents[0]


def _read_strong_labels(path: Path) -> dict[int, int]:
    if not path.exists():
        raise CorpusError(f"labels file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "utterance_id,label":
        raise CorpusError(f"{path.name}: expected header 'utterance_id,label'")
    labels: dict[int, int] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            uid_text, label_text = line.split(",")
            uid, label = int(uid_text), int(label_text)
        except ValueError as exc:
            raise CorpusError(f"{path.name} line {lineno}: {exc}") from exc
        if label not in (-1, 1):
            raise CorpusError(f"{path.name} line {lineno}: label must be 1 or -1")
        labels[uid] = label
    if not labels:
        raise CorpusError(f"{path.name}: no labels")
    return labels


# --- subcommands ------------------------------------------------------------


def cmd_index(args) -> int:
    corpus = _load_corpus_arg(args.corpus)
    index = build_index(corpus)
    cache = Path(args.cache) if args.cache else _default_cache(args.corpus)
    save_index(index, cache)
    info = {
        "corpus_id": corpus.corpus_id,
        "n_utterances": len(corpus),
        "dropped": corpus.dropped,
        "fingerprint": corpus.fingerprint,
        "cache": str(cache),
    }
    if args.json:
        print(json.dumps(info, sort_keys=True))
    else:
        print(f"indexed {info['n_utterances']} utterances from {info['corpus_id']}")
        print(f"cache written to {cache}")
    return 0


def cmd_session(args) -> int:
    corpus = _load_corpus_arg(args.corpus)
    index = _load_or_build_readonly(corpus, args.corpus)
    records = read_script(args.script)
    session = replay(records, corpus, index)
    if not session.finalized:
        session.finalize()
    outdir = Path(args.out) if args.out else Path(args.script).parent
    outdir.mkdir(parents=True, exist_ok=True)

    labels = session.finalize_result.strong_labels
    labels_path = outdir / "labels.csv"
    lines = ["utterance_id,label"] + [f"{uid},{labels[uid]}" for uid in sorted(labels)]
    labels_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    marginals_path = None
    if session.config.mode == MODE_SLP:
        matrix, _, marginals = marginals_for_session(session)
        marginals_path = outdir / "marginals.csv"
        marginals_path.write_text(
            format_marginals(marginals, matrix.anchor.keys()), encoding="utf-8"
        )

    summary = {
        "counters": session.counters(),
        "mode": session.config.mode,
        "labels": str(labels_path),
        "marginals": str(marginals_path) if marginals_path else None,
    }
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        counters = summary["counters"]
        print(
            f"replayed {counters['queries']} queries -> "
            f"{counters['strong_labels']} strong labels, "
            f"{counters['weak_labels']} weak labels"
        )
        print(f"labels written to {labels_path}")
        if marginals_path:
            print(f"marginals written to {marginals_path}")
    return 0


def _print_metrics(metrics, as_json: bool, extra: dict | None = None) -> None:
    if as_json:
        payload = metrics.to_dict() | (extra or {})
        print(json.dumps(payload, sort_keys=True))
    else:
        print(_metrics_table(metrics), end="")


def cmd_train(args) -> int:
    corpus = _load_corpus_arg(args.corpus)
    featurizer = fit_tfidf(corpus)
    hp = ForestHyperparams(n_trees=args.trees, seed=args.seed)
    if args.mode == "strong":
        labels = _read_strong_labels(Path(args.labels))
        texts, y = strong_training_set(labels, corpus)
        model = train_classifier(featurizer.transform(texts), y, hp)
    else:
        labels_path = Path(args.labels)
        if not labels_path.exists():
            raise CorpusError(f"labels file not found: {labels_path}")
        rows = parse_marginals(labels_path.read_text(encoding="utf-8"))
        marginals = {uid: p for uid, p, _ in rows}
        texts, targets = weak_training_set(marginals, corpus)
        model = train_regressor(featurizer.transform(texts), targets, hp)
    if args.model_out:
        save_model(model, featurizer, args.model_out)
    if args.test:
        test_set = load_test_set(args.test, corpus)
        intent = _resolve_intent(test_set, args.intent)
        metrics = evaluate(model, featurizer, test_set, intent, args.threshold)
        _print_metrics(metrics, args.json, {"intent": intent, "n_rows": len(texts)})
    elif args.json:
        print(json.dumps({"n_rows": len(texts), "model": args.model_out}, sort_keys=True))
    else:
        print(f"trained {args.mode} model on {len(texts)} rows")
        if args.model_out:
            print(f"model written to {args.model_out}")
    return 0


def cmd_eval(args) -> int:
    model, featurizer = load_model(args.model)
    test_set = load_test_set(args.test)
    intent = _resolve_intent(test_set, args.intent)
    metrics = evaluate(model, featurizer, test_set, intent, args.threshold)
    _print_metrics(metrics, args.json, {"intent": intent})
    return 0


def cmd_experiment(args) -> int:
    if args.config:
        config, sweep = load_experiment_config(args.config)
    else:
        config, sweep = ExperimentConfig(), None
    outdir = Path(args.out)
    if sweep:
        cells = run_sweep(config, sweep)
        write_sweep_report(cells, outdir)
        if args.json:
            per_seed = [
                {**d, "cell": overrides}
                for overrides, result in cells
                for d in result.per_seed_details()
            ]
            print(json.dumps(per_seed, sort_keys=True))
        else:
            print((outdir / "sweep.txt").read_text(), end="")
            print(f"sweep report written to {outdir}")
    else:
        result = run_ab(config)
        write_experiment_report(result, outdir)
        if args.json:
            print(json.dumps(result.per_seed_details(), sort_keys=True))
        else:
            print(results_table(result.aggregate_rows()), end="")
            print(f"report written to {outdir}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app, load_persisted_corpora

    addr = args.addr or os.environ.get("SLP_ADDR") or "127.0.0.1:8765"
    host, _, port_text = addr.rpartition(":")
    if not host or not port_text.isdigit():
        raise ConfigError(f"--addr must look like host:port, got {addr!r}")
    data_dir = args.data_dir or os.environ.get("SLP_DATA_DIR") or None
    app = create_app(data_dir=data_dir, async_jobs=args.async_jobs)
    n = load_persisted_corpora(app)
    if n:
        print(f"loaded {n} persisted corpora from {data_dir}")
    uvicorn.run(app, host=host, port=int(port_text), log_level="info")
    return 0


_COMMANDS = {
    "index": cmd_index,
    "session": cmd_session,
    "train": cmd_train,
    "eval": cmd_eval,
    "experiment": cmd_experiment,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (SlpError, OSError) as exc:
        print(f"slp {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"slp {args.command}: internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
