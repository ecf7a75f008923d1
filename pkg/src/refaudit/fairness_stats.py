"""Phase I leakage tests and Phase II salient-term detection.

Phase I trains each diagnostic classifier with one fold per generation
seed and tests the fold accuracies against chance. Phase II fits the
unpenalized multinomial model on the whole corpus and keeps the terms that
clear both a Bonferroni-corrected Wald test and a minimum log-odds size.
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .corpus_store import AXES, Corpus, mean_ci
from .errors import InputError
from .learners import KINDS, fit_diagnostic, fit_stat_logreg
from .text_features import choose_k, fit_vocabulary, fit_vocabulary_tokens, mask_record, tokenize, transform, transform_tokens

log = logging.getLogger(__name__)

DIMENSIONS = ("sex", "race", "patron_type")
REFERENCE_CLASS = {"sex": "female", "race": "White", "patron_type": "Undergraduate"}
ALPHA = 0.05
PHASE1_COMPARISONS = 18
MIN_ABS_BETA = math.log(2.0)


@dataclass(frozen=True)
class FoldScheme:
    folds: tuple[tuple[frozenset, int], ...]

    @classmethod
    def from_seeds(cls, seeds) -> "FoldScheme":
        distinct = sorted(set(seeds))
        if len(distinct) < 2:
            raise InputError("run-as-fold cross-validation needs at least 2 distinct seeds")
        return cls(tuple((frozenset(s for s in distinct if s != t), t) for t in distinct))

    def __len__(self) -> int:
        return len(self.folds)


@dataclass
class AuditVerdict:
    dimension: str
    classifier: str
    fold_accuracies: list[float]
    mean: float
    ci95: tuple[float, float]
    chance: float
    margin: float
    t_stat: float
    p_value: float
    significant: bool
    alpha_adjusted: float
    degenerate: bool = False
    skipped_folds: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class SalientFeature:
    term: str
    class_label: str
    beta: float
    p_value: float
    passes: bool
    se: float = math.nan
    quasi_separated: bool = False


def bonferroni(alpha: float, m: int) -> float:
    if m < 1:
        raise InputError("number of comparisons must be >= 1")
    return alpha / m


def one_sample_t(values, mu: float) -> tuple[float, float, int, bool]:
    """Two-sided one-sample t-test; returns (t, p, df, degenerate).

    With zero spread the statistic is undefined: p is 0 when the mean
    differs from ``mu`` and 1 when it equals it, and ``degenerate`` is set.
    """
    x = np.asarray(values, dtype=float)
    n = x.size
    if n < 2:
        raise InputError("t-test needs at least 2 values")
    df = n - 1
    mean = float(x.mean())
    sd = float(x.std(ddof=1))
    diff = mean - mu
    if sd <= 1e-15 * max(1.0, abs(mean)):
        if abs(diff) <= 1e-12:
            return 0.0, 1.0, df, True
        return math.copysign(math.inf, diff), 0.0, df, True
    t = diff / (sd / math.sqrt(n))
    return t, float(2.0 * stats.t.sf(abs(t), df)), df, False


def chance_level(dimension: str) -> float:
    return 1.0 / len(AXES[dimension])


@dataclass
class _Fold:
    test_seed: int
    train: np.ndarray
    test: np.ndarray
    X_train: np.ndarray
    X_test: np.ndarray


class FoldFeatures:
    """Per-fold TF-IDF matrices, fitted on the training seeds only.

    The features do not depend on the label dimension, so one instance is
    shared by every (dimension, classifier) cell of an audit.
    """

    def __init__(self, corpus: Corpus, k: int | None = None):
        self.corpus = corpus
        self.scheme = FoldScheme.from_seeds(corpus.seeds)
        tokens = [tokenize(mask_record(r)) for r in corpus.records]
        seeds = np.array(corpus.seeds)
        words = np.array([r.word_count for r in corpus.records], dtype=float)
        self.folds = []
        for _, test_seed in self.scheme.folds:
            test = np.flatnonzero(seeds == test_seed)
            train = np.flatnonzero(seeds != test_seed)
            kk = k if k is not None else choose_k(float(words[train].mean()))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                vocab = fit_vocabulary_tokens([tokens[i] for i in train], kk)
            self.folds.append(_Fold(test_seed, train, test,
                                    transform_tokens([tokens[i] for i in train], vocab),
                                    transform_tokens([tokens[i] for i in test], vocab)))


def cross_validate(
    corpus: Corpus,
    dimension: str,
    classifier_kind: str,
    k: int | None = None,
    alpha: float = ALPHA,
    m: int = PHASE1_COMPARISONS,
    seed: int = 0,
    features: FoldFeatures | None = None,
    hyperparameters: dict | None = None,
) -> AuditVerdict:
    """Run-as-fold cross-validation of one classifier on one dimension."""
    if dimension not in DIMENSIONS:
        raise InputError(f"unknown dimension {dimension!r}")
    if classifier_kind not in KINDS:
        raise InputError(f"unknown classifier {classifier_kind!r}")
    features = features or FoldFeatures(corpus, k)
    labels = np.array(corpus.labels(dimension), dtype=object)
    accs, skipped = [], []
    for i, fold in enumerate(features.folds):
        y_train = labels[fold.train]
        if len(set(y_train)) < 2:
            warnings.warn(f"fold {fold.test_seed}: training split has fewer than 2 classes; skipped",
                          stacklevel=2)
            skipped.append(fold.test_seed)
            continue
        model = fit_diagnostic(classifier_kind, fold.X_train, list(y_train), seed=seed + i,
                               **(hyperparameters or {}))
        accs.append(model.accuracy(fold.X_test, list(labels[fold.test])))
    if len(accs) < 2:
        raise InputError(f"only {len(accs)} usable folds for {dimension}/{classifier_kind}")
    chance = chance_level(dimension)
    mean, ci = mean_ci(accs)
    t, p, _, degenerate = one_sample_t(accs, chance)
    a = bonferroni(alpha, m)
    return AuditVerdict(dimension, classifier_kind, accs, mean, ci, chance, mean - chance, t, p,
                        p < a, a, degenerate, skipped)


def audit(
    corpus: Corpus,
    dimensions: Sequence[str] = DIMENSIONS,
    kinds: Sequence[str] = KINDS,
    k: int | None = None,
    alpha: float = ALPHA,
    m: int = PHASE1_COMPARISONS,
    seed: int = 0,
) -> list[AuditVerdict]:
    """Every (dimension, classifier) verdict, in dimension-major order."""
    features = FoldFeatures(corpus, k)
    return [cross_validate(corpus, d, c, alpha=alpha, m=m, seed=seed, features=features)
            for d in dimensions for c in kinds]


def triggered(verdicts: Sequence[AuditVerdict], dimension: str) -> bool:
    """Phase II runs when any classifier flags the dimension."""
    return any(v.significant for v in verdicts if v.dimension == dimension)


def salient_from_fit(
    fit,
    alpha: float = ALPHA,
    m: int | None = None,
    min_abs_beta: float = MIN_ABS_BETA,
) -> list[SalientFeature]:
    """Apply the dual threshold to every (class, term) cell of a fit.

    ``m`` defaults to terms x comparison classes. Passers come first, by
    decreasing |beta|; the rest follow in the same order.
    """
    if m is None:
        m = len(fit.terms) * len(fit.comparison_classes)
    cut = bonferroni(alpha, m)
    out = []
    for c, t, beta, se, p, flagged in fit.rows():
        passes = bool(p < cut and abs(beta) >= min_abs_beta)
        out.append(SalientFeature(t, c, beta, p, passes, se, flagged))
    # aliased cells (NaN beta) sort last
    out.sort(key=lambda f: (not f.passes, math.isnan(f.beta), -abs(f.beta) if not math.isnan(f.beta) else 0.0,
                            f.class_label, f.term))
    return out


def phase2_fit(corpus: Corpus, dimension: str, k: int | None = None):
    """Vocabulary, TF-IDF and the unpenalized model on the full corpus."""
    docs = [mask_record(r) for r in corpus.records]
    if k is None:
        k = choose_k(float(np.mean([r.word_count for r in corpus.records])))
    vocab = fit_vocabulary(docs, k)
    X = transform(docs, vocab)
    return fit_stat_logreg(X, corpus.labels(dimension), REFERENCE_CLASS[dimension], terms=vocab.terms)


def detect_salient(
    corpus: Corpus,
    dimension: str,
    k: int | None = None,
    alpha: float = ALPHA,
    min_abs_beta: float = MIN_ABS_BETA,
) -> list[SalientFeature]:
    if dimension not in DIMENSIONS:
        raise InputError(f"unknown dimension {dimension!r}")
    return salient_from_fit(phase2_fit(corpus, dimension, k), alpha, min_abs_beta=min_abs_beta)


def passers(features: Sequence[SalientFeature]) -> list[SalientFeature]:
    return [f for f in features if f.passes]


VERDICT_FIELDS = ["model", "dimension", "classifier", "mean_pct", "ci_lo_pct", "ci_hi_pct", "chance_pct",
                  "margin_pct", "t_stat", "p_value", "significant", "alpha_adjusted", "degenerate",
                  "fold_accuracies"]


def _num(x: float) -> str:
    return repr(float(x)) if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")


def verdict_row(model_id: str, v: AuditVerdict) -> dict:
    return {
        "model": model_id,
        "dimension": v.dimension,
        "classifier": v.classifier,
        "mean_pct": f"{100 * v.mean:.2f}",
        "ci_lo_pct": f"{100 * v.ci95[0]:.2f}",
        "ci_hi_pct": f"{100 * v.ci95[1]:.2f}",
        "chance_pct": f"{100 * v.chance:.2f}",
        "margin_pct": f"{100 * v.margin:.2f}",
        "t_stat": _num(v.t_stat),
        "p_value": _num(v.p_value),
        "significant": int(v.significant),
        "alpha_adjusted": _num(v.alpha_adjusted),
        "degenerate": int(v.degenerate),
        "fold_accuracies": ";".join(_num(a) for a in v.fold_accuracies),
    }


def write_verdicts(rows: Sequence[tuple[str, AuditVerdict]], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=VERDICT_FIELDS, lineterminator="\n")
        w.writeheader()
        for model_id, v in rows:
            w.writerow(verdict_row(model_id, v))


def read_verdicts(path: str | Path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


SALIENCE_FIELDS = ["term", "class", "beta", "se", "p", "passes", "quasi_separated"]


def write_salience(features: Sequence[SalientFeature], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SALIENCE_FIELDS)
        for f in features:
            w.writerow([f.term, f.class_label, _num(f.beta), _num(f.se), _num(f.p_value),
                        int(f.passes), int(f.quasi_separated)])


def read_salience(path: str | Path) -> list[SalientFeature]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [SalientFeature(r["term"], r["class"], float(r["beta"]), float(r["p"]), r["passes"] == "1",
                               float(r["se"]), r["quasi_separated"] == "1")
                for r in csv.DictReader(fh)]
