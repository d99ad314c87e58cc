"""Downstream featurization, forest training, and evaluation.

Features are TF-IDF rows over the whole training corpus vocabulary with raw
term counts, idf(t) = ln((1 + n) / (1 + df(t))) + 1, and L2-normalized rows.
Strong labels train a forest classifier; label-model marginals train a
forest regressor whose predictions are thresholded at evaluation time.
scikit-learn provides the estimators; this module owns the contracts,
validation, metrics, and the persisted file format.
"""

from __future__ import annotations

import hashlib
import json
import pickle
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from sklearn.ensemble import RandomForestClassifier, RandomForestRegressor
from sklearn.feature_extraction.text import TfidfVectorizer

from .corpus import Corpus, TestSet
from .errors import TrainError
from .tokenize import tokenize

MODEL_FORMAT = "slp-model"
MODEL_VERSION = 1

KIND_CLASSIFIER = "classifier"
KIND_REGRESSOR = "regressor"

DEFAULT_DECISION_THRESHOLD = 0.5


@dataclass(frozen=True)
class ForestHyperparams:
    n_trees: int = 100
    max_depth: int | None = None
    min_leaf: int = 1
    feature_fraction: str | float = "sqrt"
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise TrainError("n_trees must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise TrainError("max_depth must be >= 1 or None")
        if self.min_leaf < 1:
            raise TrainError("min_leaf must be >= 1")


class TfidfFeaturizer:
    """Corpus-wide TF-IDF rows sharing the search index tokenizer."""

    def __init__(self) -> None:
        self._vectorizer: TfidfVectorizer | None = None
        self.built_from: str = ""

    def fit(self, texts: Sequence[str], built_from: str = "") -> "TfidfFeaturizer":
        if not texts:
            raise TrainError("cannot fit a featurizer on an empty corpus")
        vectorizer = TfidfVectorizer(
            tokenizer=tokenize,
            preprocessor=None,
            lowercase=False,
            token_pattern=None,
            norm="l2",
            smooth_idf=True,
            sublinear_tf=False,
        )
        try:
            vectorizer.fit(texts)
        except ValueError as exc:
            raise TrainError(f"featurizer fit failed: {exc}") from exc
        self._vectorizer = vectorizer
        self.built_from = built_from
        return self

    def _require_fitted(self) -> TfidfVectorizer:
        if self._vectorizer is None:
            raise TrainError("featurizer is not fitted")
        return self._vectorizer

    def transform(self, texts: Sequence[str]):
        return self._require_fitted().transform(texts)

    @property
    def vocabulary(self) -> dict[str, int]:
        return dict(self._require_fitted().vocabulary_)

    @property
    def idf(self) -> np.ndarray:
        return np.asarray(self._require_fitted().idf_)

    def vocabulary_hash(self) -> str:
        items = sorted(self.vocabulary.items())
        digest = hashlib.sha256(json.dumps(items).encode("utf-8"))
        return digest.hexdigest()


def fit_tfidf(corpus: Corpus) -> TfidfFeaturizer:
    return TfidfFeaturizer().fit(corpus.texts(), built_from=corpus.fingerprint)


@dataclass
class ForestModel:
    kind: str
    hyperparams: ForestHyperparams
    estimator: object
    vocabulary_hash: str = ""

    def predict_label(self, X, threshold: float = DEFAULT_DECISION_THRESHOLD) -> np.ndarray:
        """Predicted class in {-1, +1} per row."""
        if self.kind == KIND_CLASSIFIER:
            return np.asarray(self.estimator.predict(X), dtype=np.int64)
        scores = self.predict_value(X)
        return np.where(scores >= threshold, 1, -1).astype(np.int64)

    def predict_value(self, X) -> np.ndarray:
        """Regressor target estimate (classifier: probability of +1)."""
        if self.kind == KIND_REGRESSOR:
            return np.asarray(self.estimator.predict(X), dtype=np.float64)
        proba = self.estimator.predict_proba(X)
        plus_column = list(self.estimator.classes_).index(1)
        return np.asarray(proba[:, plus_column], dtype=np.float64)


def _max_features(fraction: str | float):
    if fraction == "sqrt":
        return "sqrt"
    value = float(fraction)
    if not 0.0 < value <= 1.0:
        raise TrainError(f"feature_fraction must be 'sqrt' or in (0, 1], got {fraction}")
    return value


def train_classifier(X, y: Sequence[int], hp: ForestHyperparams | None = None) -> ForestModel:
    """Gini forest on strong labels y in {-1, +1}; both classes required."""
    hp = hp or ForestHyperparams()
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] != len(y):
        raise TrainError(f"X has {X.shape[0]} rows but y has {len(y)}")
    if len(y) == 0:
        raise TrainError("empty training set")
    classes = set(np.unique(y).tolist())
    if not classes <= {-1, 1}:
        raise TrainError(f"labels must be -1 or +1, got {sorted(classes)}")
    if classes != {-1, 1}:
        raise TrainError("degenerate training set: only one class present")
    estimator = RandomForestClassifier(
        n_estimators=hp.n_trees,
        criterion="gini",
        max_depth=hp.max_depth,
        min_samples_leaf=hp.min_leaf,
        max_features=_max_features(hp.feature_fraction),
        bootstrap=hp.bootstrap,
        random_state=hp.seed,
        n_jobs=1,
    )
    estimator.fit(X, y)
    return ForestModel(KIND_CLASSIFIER, hp, estimator)


def train_regressor(X, targets: Sequence[float], hp: ForestHyperparams | None = None) -> ForestModel:
    """Variance-split forest on marginal targets in [0, 1]."""
    hp = hp or ForestHyperparams()
    targets = np.asarray(targets, dtype=np.float64)
    if X.shape[0] != len(targets):
        raise TrainError(f"X has {X.shape[0]} rows but targets has {len(targets)}")
    if len(targets) < 2:
        raise TrainError("regressor needs at least two training rows")
    if np.any(targets < 0.0) or np.any(targets > 1.0):
        raise TrainError("regression targets must lie in [0, 1]")
    estimator = RandomForestRegressor(
        n_estimators=hp.n_trees,
        criterion="squared_error",
        max_depth=hp.max_depth,
        min_samples_leaf=hp.min_leaf,
        max_features=_max_features(hp.feature_fraction),
        bootstrap=hp.bootstrap,
        random_state=hp.seed,
        n_jobs=1,
    )
    estimator.fit(X, targets)
    return ForestModel(KIND_REGRESSOR, hp, estimator)


# --- metrics ---------------------------------------------------------------


@dataclass
class Metrics:
    """Binary metrics; ratios with a zero denominator are None, never 0."""

    accuracy: float
    precision_pos: float | None
    precision_neg: float | None
    recall_pos: float | None
    recall_neg: float | None
    support_pos: int
    support_neg: int

    @property
    def n_test(self) -> int:
        return self.support_pos + self.support_neg

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_confusion(tp: int, fp: int, tn: int, fn: int) -> "Metrics":
        total = tp + fp + tn + fn
        if total == 0:
            raise TrainError("cannot score an empty test set")

        def ratio(num: int, den: int) -> float | None:
            return num / den if den else None

        return Metrics(
            accuracy=(tp + tn) / total,
            precision_pos=ratio(tp, tp + fp),
            precision_neg=ratio(tn, tn + fn),
            recall_pos=ratio(tp, tp + fn),
            recall_neg=ratio(tn, tn + fp),
            support_pos=tp + fn,
            support_neg=tn + fp,
        )


def evaluate(
    model: ForestModel,
    featurizer: TfidfFeaturizer,
    test_set: TestSet,
    intent: str,
    decision_threshold: float = DEFAULT_DECISION_THRESHOLD,
) -> Metrics:
    rows = test_set.rows_for(intent)
    if not rows:
        raise TrainError(f"test set has no rows for intent {intent!r}")
    X = featurizer.transform([row.text for row in rows])
    predictions = model.predict_label(X, threshold=decision_threshold)
    tp = fp = tn = fn = 0
    for row, pred in zip(rows, predictions):
        if row.label > 0:
            tp, fn = (tp + 1, fn) if pred > 0 else (tp, fn + 1)
        else:
            fp, tn = (fp + 1, tn) if pred > 0 else (fp, tn + 1)
    return Metrics.from_confusion(tp, fp, tn, fn)


# --- training-set construction ----------------------------------------------


def strong_training_set(
    strong_labels: Mapping[int, int], corpus: Corpus
) -> tuple[list[str], list[int]]:
    texts, labels = [], []
    for cid in sorted(strong_labels):
        texts.append(corpus.text_of(cid))
        labels.append(int(strong_labels[cid]))
    if not texts:
        raise TrainError("no strong labels to train on")
    return texts, labels


def weak_training_set(
    marginal_values: Mapping[int, float], corpus: Corpus
) -> tuple[list[str], list[float]]:
    texts, targets = [], []
    for cid in sorted(marginal_values):
        texts.append(corpus.text_of(cid))
        targets.append(float(marginal_values[cid]))
    if not texts:
        raise TrainError("no marginal labels to train on")
    return texts, targets


# --- persistence --------------------------------------------------------------


def save_model(model: ForestModel, featurizer: TfidfFeaturizer, path: str | Path) -> Path:
    """Write a self-describing versioned model file (featurizer included)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": MODEL_FORMAT,
        "v": MODEL_VERSION,
        "kind": model.kind,
        "hyperparams": asdict(model.hyperparams),
        "vocabulary_hash": featurizer.vocabulary_hash(),
        "featurizer": featurizer,
        "estimator": model.estimator,
    }
    with path.open("wb") as fh:
        pickle.dump(payload, fh, protocol=pickle.HIGHEST_PROTOCOL)
    return path


def load_model(path: str | Path) -> tuple[ForestModel, TfidfFeaturizer]:
    path = Path(path)
    if not path.exists():
        raise TrainError(f"model file not found: {path}")
    with path.open("rb") as fh:
        payload = pickle.load(fh)
    if not isinstance(payload, dict) or payload.get("format") != MODEL_FORMAT:
        raise TrainError(f"{path} is not a model file")
    if payload.get("v") != MODEL_VERSION:
        raise TrainError(f"unsupported model file version {payload.get('v')!r}")
    model = ForestModel(
        kind=payload["kind"],
        hyperparams=ForestHyperparams(**payload["hyperparams"]),
        estimator=payload["estimator"],
        vocabulary_hash=payload["vocabulary_hash"],
    )
    return model, payload["featurizer"]
