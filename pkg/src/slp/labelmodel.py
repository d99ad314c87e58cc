"""Generative label model over weak labeling functions and a strong anchor row.

The label matrix has one sparse row per weak labeling function (entries in
{-1, 0, +1}, 0 meaning abstain) plus a distinguished anchor row holding the
analyst's strong labels.  Each function i is modeled by two parameters:

    propensity  beta_i  = probability the function labels a candidate at all
    accuracy    alpha_i = probability the emitted label matches the latent y

Conditioned on y, functions are independent, so a candidate's column has
likelihood  prod_i [beta_i * alpha_i]         if it labels y,
            prod_i [beta_i * (1 - alpha_i)]   if it labels -y,
            prod_i [1 - beta_i]               if it abstains.

Whether a function labels is independent of y, which makes the propensity
MLE exact (coverage / m) with no iteration.  Accuracies are fit by EM with a
closed-form M-step: the posterior-weighted agreement fraction.  The anchor
row is held at accuracy 1.0 and never updated, so strong labels pin their
candidates' posteriors to exactly 0 or 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import LabelModelError
from .session import Session, WeakFunction

log = logging.getLogger(__name__)

ACCURACY_MIN = 0.01
ACCURACY_MAX = 0.99
INIT_ACCURACY = 0.7

REINFORCING = "reinforcing"
FIXING = "fixing"
DEFAULT_REINFORCING_WEIGHT = 0.5
DEFAULT_AGREEMENT_THRESHOLD = 0.9
DEFAULT_MIN_OVERLAP = 10

ANCHOR_SOURCE = "anchor"
WEAK_SOURCE = "weak"


@dataclass
class LabelMatrix:
    """Sparse {-1, 0, +1} matrix: weak rows plus the strong anchor row."""

    n_candidates: int
    rows: list[dict[int, int]]
    anchor: dict[int, int]

    def __post_init__(self) -> None:
        if self.n_candidates <= 0:
            raise LabelModelError("label matrix needs a positive candidate count")
        if not self.rows and not self.anchor:
            raise LabelModelError("label matrix needs weak functions or strong labels")
        for i, row in enumerate(self.rows):
            self._check_entries(row, f"function {i}")
            if not row:
                raise LabelModelError(f"function {i} covers no candidates")
        self._check_entries(self.anchor, "anchor row")

    def _check_entries(self, row: Mapping[int, int], who: str) -> None:
        for cid, value in row.items():
            if not 0 <= cid < self.n_candidates:
                raise LabelModelError(f"{who}: candidate id {cid} outside [0, {self.n_candidates})")
            if value not in (-1, 1):
                raise LabelModelError(f"{who}: label must be -1 or +1, got {value}")

    @property
    def n_functions(self) -> int:
        return len(self.rows)

    def coverage(self, i: int) -> int:
        return len(self.rows[i])

    def covered_ids(self) -> list[int]:
        seen: set[int] = set(self.anchor)
        for row in self.rows:
            seen.update(row)
        return sorted(seen)


def assemble(
    functions: Iterable[WeakFunction],
    strong_labels: Mapping[int, int],
    n_candidates: int,
) -> LabelMatrix:
    """Build the label matrix from finalized session output.

    Functions that cover nothing (every neighborhood member was verdicted)
    are dropped: they would only contribute empty rows.
    """
    rows: list[dict[int, int]] = []
    for fn in functions:
        if fn.label not in (-1, 1):
            raise LabelModelError(f"function for query {fn.query_id}: bad label {fn.label}")
        if not fn.covered:
            log.debug("dropping empty weak function from query %d", fn.query_id)
            continue
        rows.append({cid: fn.label for cid in fn.covered})
    anchor = dict(strong_labels)
    return LabelMatrix(n_candidates=n_candidates, rows=rows, anchor=anchor)


@dataclass(frozen=True)
class DependencyEdge:
    """A learned pairwise dependency between weak functions.

    Reinforcing: the pair mostly agrees, so the second function's
    log-contribution is scaled by `weight` wherever they agree.  Fixing: the
    pair mostly disagrees and `first` tracks the anchor better, so the second
    function's contribution is dropped wherever they disagree.
    """

    kind: str
    first: int
    second: int
    weight: float
    agreement: float


@dataclass
class GenerativeParams:
    accuracy: np.ndarray          # per weak function, clamped to [0.01, 0.99]
    propensity: np.ndarray        # per weak function, exact coverage fraction
    anchor_propensity: float
    class_prior: float
    anchor_accuracy: float = 1.0
    dependencies: list[DependencyEdge] = field(default_factory=list)
    log_likelihoods: list[float] = field(default_factory=list)
    n_iters: int = 0
    converged: bool = False


class _Arrays:
    """Compact entry arrays over the covered candidates, shared by fit steps."""

    def __init__(self, matrix: LabelMatrix):
        self.covered = matrix.covered_ids()
        self.position = {cid: i for i, cid in enumerate(self.covered)}
        f_idx: list[int] = []
        c_idx: list[int] = []
        vals: list[float] = []
        for i, row in enumerate(matrix.rows):
            for cid in sorted(row):
                f_idx.append(i)
                c_idx.append(self.position[cid])
                vals.append(float(row[cid]))
        self.f_idx = np.asarray(f_idx, dtype=np.int64)
        self.c_idx = np.asarray(c_idx, dtype=np.int64)
        self.vals = np.asarray(vals, dtype=np.float64)
        anchor_ids = sorted(matrix.anchor)
        self.a_idx = np.asarray([self.position[cid] for cid in anchor_ids], dtype=np.int64)
        self.a_vals = np.asarray([float(matrix.anchor[cid]) for cid in anchor_ids])
        self.counts = np.asarray([matrix.coverage(i) for i in range(matrix.n_functions)], dtype=np.float64)
        self.n_covered = len(self.covered)
        self.m = matrix.n_candidates


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _posterior(arrays: _Arrays, accuracy: np.ndarray, class_prior: float) -> np.ndarray:
    """P(y = +1 | column) per covered candidate; anchor evidence pins to 0/1."""
    llr = np.full(arrays.n_covered, math.log(class_prior) - math.log1p(-class_prior))
    if len(arrays.f_idx):
        logit_acc = np.log(accuracy) - np.log1p(-accuracy)
        np.add.at(llr, arrays.c_idx, arrays.vals * logit_acc[arrays.f_idx])
    w = _sigmoid(llr)
    w[arrays.a_idx] = (arrays.a_vals + 1.0) / 2.0
    return w


def log_likelihood(
    matrix: LabelMatrix,
    accuracy: np.ndarray,
    propensity: np.ndarray | None = None,
    class_prior: float = 0.5,
    _arrays: _Arrays | None = None,
) -> float:
    """Exact marginal log-likelihood of the matrix under the generative model."""
    arrays = _arrays or _Arrays(matrix)
    accuracy = np.asarray(accuracy, dtype=np.float64)
    if propensity is None:
        propensity = arrays.counts / arrays.m
    anchor_prop = len(matrix.anchor) / arrays.m

    def abstain_term(beta: float) -> float:
        return math.log1p(-beta) if beta < 1.0 else 0.0

    abstain_all = sum(abstain_term(b) for b in propensity) + abstain_term(anchor_prop)
    s_plus = np.full(arrays.n_covered, abstain_all)
    s_minus = np.full(arrays.n_covered, abstain_all)
    if len(arrays.f_idx):
        # np.where evaluates both branches, so mask the log of a full-coverage
        # propensity (log1p(-1)) before it can warn
        with np.errstate(divide="ignore"):
            log_beta = np.log(propensity)
            t = np.where(propensity < 1.0, np.log1p(-propensity), 0.0)
        log_acc = np.log(accuracy)
        log_inacc = np.log1p(-accuracy)
        base = (log_beta - t)[arrays.f_idx]
        agree_plus = np.where(arrays.vals > 0, log_acc[arrays.f_idx], log_inacc[arrays.f_idx])
        agree_minus = np.where(arrays.vals < 0, log_acc[arrays.f_idx], log_inacc[arrays.f_idx])
        np.add.at(s_plus, arrays.c_idx, base + agree_plus)
        np.add.at(s_minus, arrays.c_idx, base + agree_minus)
    if len(arrays.a_idx):
        a_base = math.log(anchor_prop) - abstain_term(anchor_prop)
        with np.errstate(divide="ignore"):
            s_plus[arrays.a_idx] += a_base + np.where(arrays.a_vals > 0, 0.0, -np.inf)
            s_minus[arrays.a_idx] += a_base + np.where(arrays.a_vals < 0, 0.0, -np.inf)
    total = np.logaddexp(
        math.log(class_prior) + s_plus, math.log1p(-class_prior) + s_minus
    ).sum()
    total += (arrays.m - arrays.n_covered) * abstain_all
    return float(total)


def fit_generative(
    matrix: LabelMatrix,
    class_prior: float = 0.5,
    max_iters: int = 100,
    tol: float = 1e-8,
    init_accuracy: float = INIT_ACCURACY,
    dependencies: Sequence[DependencyEdge] | None = None,
) -> GenerativeParams:
    """Fit accuracies by EM; propensities are closed-form and exact.

    Every iteration evaluates the marginal log-likelihood, which is
    guaranteed non-decreasing (the M-step maximizes the expected
    complete-data log-likelihood in closed form, clamped to the feasible
    accuracy interval).  Dependencies do not enter the fit; they only adjust
    the final marginals.
    """
    if not 0.0 < class_prior < 1.0:
        raise LabelModelError(f"class_prior must be in (0, 1), got {class_prior}")
    if max_iters < 0:
        raise LabelModelError("max_iters must be non-negative")
    arrays = _Arrays(matrix)
    n_funcs = matrix.n_functions
    propensity = arrays.counts / arrays.m
    accuracy = np.full(n_funcs, float(init_accuracy))
    accuracy = np.clip(accuracy, ACCURACY_MIN, ACCURACY_MAX)
    lls = [log_likelihood(matrix, accuracy, propensity, class_prior, _arrays=arrays)]
    converged = n_funcs == 0
    iters = 0
    for _ in range(max_iters if n_funcs else 0):
        w = _posterior(arrays, accuracy, class_prior)
        agree = np.where(arrays.vals > 0, w[arrays.c_idx], 1.0 - w[arrays.c_idx])
        sums = np.bincount(arrays.f_idx, weights=agree, minlength=n_funcs)
        accuracy = np.clip(sums / arrays.counts, ACCURACY_MIN, ACCURACY_MAX)
        lls.append(log_likelihood(matrix, accuracy, propensity, class_prior, _arrays=arrays))
        iters += 1
        if lls[-1] - lls[-2] < tol:
            converged = True
            break
    return GenerativeParams(
        accuracy=accuracy,
        propensity=propensity,
        anchor_propensity=len(matrix.anchor) / arrays.m,
        class_prior=class_prior,
        dependencies=list(dependencies or []),
        log_likelihoods=lls,
        n_iters=iters,
        converged=converged,
    )


def learn_dependencies(
    matrix: LabelMatrix,
    agreement_threshold: float = DEFAULT_AGREEMENT_THRESHOLD,
    min_overlap: int = DEFAULT_MIN_OVERLAP,
    reinforcing_weight: float = DEFAULT_REINFORCING_WEIGHT,
) -> list[DependencyEdge]:
    """Learn pairwise reinforcing/fixing edges from empirical agreement.

    Pairs with joint coverage below `min_overlap` are skipped.  A mostly
    disagreeing pair only yields a fixing edge when the anchor breaks the
    tie: on anchor-labeled disagreements one function must match the anchor
    strictly more often than the other.
    """
    if not 0.5 < agreement_threshold <= 1.0:
        raise LabelModelError("agreement_threshold must be in (0.5, 1]")
    edges: list[DependencyEdge] = []
    for i in range(matrix.n_functions):
        row_i = matrix.rows[i]
        for j in range(i + 1, matrix.n_functions):
            row_j = matrix.rows[j]
            joint = row_i.keys() & row_j.keys()
            if len(joint) < min_overlap:
                continue
            agreements = sum(1 for cid in joint if row_i[cid] == row_j[cid])
            rate = agreements / len(joint)
            if rate >= agreement_threshold:
                edges.append(DependencyEdge(REINFORCING, i, j, reinforcing_weight, rate))
            elif rate <= 1.0 - agreement_threshold:
                wins_i = wins_j = 0
                for cid in joint:
                    if row_i[cid] == row_j[cid] or cid not in matrix.anchor:
                        continue
                    truth = matrix.anchor[cid]
                    if row_i[cid] == truth:
                        wins_i += 1
                    elif row_j[cid] == truth:
                        wins_j += 1
                if wins_i > wins_j:
                    edges.append(DependencyEdge(FIXING, i, j, 1.0, rate))
                elif wins_j > wins_i:
                    edges.append(DependencyEdge(FIXING, j, i, 1.0, rate))
    return edges


def marginals(matrix: LabelMatrix, params: GenerativeParams) -> dict[int, float]:
    """Posterior P(y = +1) per covered candidate.

    Anchor-labeled candidates come out exactly 0.0 or 1.0.  Candidates whose
    functions all abstain are absent.  Dependency edges, when present, adjust
    individual contributions before the sigmoid.
    """
    logit_prior = math.log(params.class_prior) - math.log1p(-params.class_prior)
    logit_acc = np.log(params.accuracy) - np.log1p(-params.accuracy)
    llr: dict[int, float] = {}
    for i, row in enumerate(matrix.rows):
        for cid, value in row.items():
            llr[cid] = llr.get(cid, logit_prior) + value * float(logit_acc[i])
    for edge in params.dependencies:
        row_first = matrix.rows[edge.first]
        row_second = matrix.rows[edge.second]
        second_contrib = float(logit_acc[edge.second])
        for cid in row_first.keys() & row_second.keys():
            v1, v2 = row_first[cid], row_second[cid]
            if edge.kind == FIXING and v1 != v2:
                llr[cid] -= v2 * second_contrib
            elif edge.kind == REINFORCING and v1 == v2:
                llr[cid] -= (1.0 - edge.weight) * v2 * second_contrib
    for cid in matrix.anchor:
        llr.setdefault(cid, 0.0)
    out: dict[int, float] = {}
    for cid in sorted(llr):
        if cid in matrix.anchor:
            out[cid] = 1.0 if matrix.anchor[cid] > 0 else 0.0
        else:
            x = llr[cid]
            out[cid] = float(1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x)))
    return out


def marginals_for_session(session: Session) -> tuple[LabelMatrix, GenerativeParams, dict[int, float]]:
    """Finalized session -> fitted label model and marginals, per its config."""
    result = session.finalize_result
    matrix = assemble(result.functions, result.strong_labels, session.corpus.id_space)
    config = session.config
    edges: list[DependencyEdge] = []
    if config.use_dependencies:
        edges = learn_dependencies(matrix)
    params = fit_generative(
        matrix,
        class_prior=config.class_prior,
        max_iters=config.em_max_iters,
        tol=config.em_tol,
        dependencies=edges,
    )
    return matrix, params, marginals(matrix, params)


# --- exports -------------------------------------------------------------------


def format_label_matrix(matrix: LabelMatrix) -> str:
    """Sparse triplet text: header "L m", rows `function,candidate,value`.

    The anchor row is written with function index L (one past the weak rows).
    """
    lines = [f"{matrix.n_functions} {matrix.n_candidates}"]
    for i, row in enumerate(matrix.rows):
        for cid in sorted(row):
            lines.append(f"{i},{cid},{row[cid]}")
    for cid in sorted(matrix.anchor):
        lines.append(f"{matrix.n_functions},{cid},{matrix.anchor[cid]}")
    return "\n".join(lines) + "\n"


def parse_label_matrix(text: str) -> LabelMatrix:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise LabelModelError("empty label matrix export")
    try:
        n_functions, n_candidates = (int(part) for part in lines[0].split())
    except ValueError:
        raise LabelModelError(f"bad label matrix header {lines[0]!r}") from None
    rows: list[dict[int, int]] = [dict() for _ in range(n_functions)]
    anchor: dict[int, int] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            f, c, v = (int(part) for part in line.split(","))
        except ValueError:
            raise LabelModelError(f"label matrix line {lineno}: bad triplet {line!r}") from None
        if f == n_functions:
            anchor[c] = v
        elif 0 <= f < n_functions:
            rows[f][c] = v
        else:
            raise LabelModelError(f"label matrix line {lineno}: function index {f} out of range")
    return LabelMatrix(n_candidates=n_candidates, rows=rows, anchor=anchor)


def format_marginals(values: Mapping[int, float], anchor_ids: Iterable[int]) -> str:
    """CSV export `utterance_id,p,source`, sorted by utterance id."""
    anchored = set(anchor_ids)
    lines = ["utterance_id,p,source"]
    for cid in sorted(values):
        source = ANCHOR_SOURCE if cid in anchored else WEAK_SOURCE
        lines.append(f"{cid},{values[cid]!r},{source}")
    return "\n".join(lines) + "\n"


def parse_marginals(text: str) -> list[tuple[int, float, str]]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "utterance_id,p,source":
        raise LabelModelError("marginals export must start with 'utterance_id,p,source'")
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3 or parts[2] not in (ANCHOR_SOURCE, WEAK_SOURCE):
            raise LabelModelError(f"marginals line {lineno}: bad row {line!r}")
        try:
            out.append((int(parts[0]), float(parts[1]), parts[2]))
        except ValueError:
            raise LabelModelError(f"marginals line {lineno}: bad row {line!r}") from None
    if not out:
        raise LabelModelError("marginals export has no rows")
    return out


def write_text(text: str, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path
