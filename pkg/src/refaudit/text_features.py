"""TF-IDF features over a frozen, frequency-ranked vocabulary.

Gendered honorifics and the patron's own name tokens are masked before
tokenization so a classifier cannot read the label straight off a
salutation.
"""
from __future__ import annotations

import csv
import logging
import re
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

MASK = "⟨MASK⟩"
DEFAULT_K = 120
SHORT_K = 60
SHORT_CORPUS_WORDS = 170
MIN_TOKEN_LEN = 2

HONORIFICS = ("Mr.", "Mrs.", "Ms.", "Miss", "Mx.", "Sir", "Madam", "Ma'am")
# a trailing period is optional for the abbreviated forms; apostrophe may be curly
_HONORIFIC_RE = re.compile(
    r"(?<![A-Za-z])(?:mrs\.?|mr\.?|ms\.?|mx\.?|miss|sir|madam|ma['’]am)(?![A-Za-z])",
    re.IGNORECASE,
)
_TOKEN_RE = re.compile(r"[^\W\d_]+")


@dataclass(frozen=True)
class Vocabulary:
    terms: tuple[str, ...]
    idf: np.ndarray
    n_docs: int

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.terms)}


@dataclass
class FeatureMatrix:
    vocabulary: Vocabulary
    rows: np.ndarray
    labels: list[dict]


def mask(response_text: str, name_tokens: Iterable[str] = ()) -> str:
    """Replace honorifics and the given name tokens with the mask sentinel."""
    text = _HONORIFIC_RE.sub(MASK, response_text)
    names = sorted({t for t in name_tokens if t}, key=len, reverse=True)
    if names:
        pattern = r"(?<![^\W\d_])(?:" + "|".join(re.escape(t) for t in names) + r")(?![^\W\d_])"
        text = re.sub(pattern, MASK, text, flags=re.IGNORECASE)
    return text


def mask_record(record) -> str:
    patron = record.query.patron
    tokens = [patron.first_name] + patron.surname.split()
    return mask(record.response_text, tokens)


def find_honorifics(text: str) -> list[str]:
    return _HONORIFIC_RE.findall(text)


def tokenize(text: str, min_len: int = MIN_TOKEN_LEN) -> list[str]:
    """Lowercase alphabetic runs; mask sentinels are dropped."""
    text = text.replace(MASK, " ").lower()
    return [t for t in _TOKEN_RE.findall(text) if len(t) >= min_len]


def choose_k(mean_words: float) -> int:
    return SHORT_K if mean_words < SHORT_CORPUS_WORDS else DEFAULT_K


def _smoothed_idf(docs_tokens: Sequence[Sequence[str]], terms: Sequence[str]) -> np.ndarray:
    df = Counter()
    for toks in docs_tokens:
        df.update(set(toks))
    n = len(docs_tokens)
    return np.array([np.log((1 + n) / (1 + df[t])) + 1.0 for t in terms])


def fit_vocabulary(docs: Sequence[str], k: int, min_len: int = MIN_TOKEN_LEN) -> Vocabulary:
    """Keep the ``k`` tokens with the highest total term frequency.

    Ties go to the lexicographically smaller token. Document frequencies for
    the idf weights are frozen from the same fitting corpus.
    """
    return fit_vocabulary_tokens([tokenize(d, min_len) for d in docs], k)


def fit_vocabulary_tokens(tokens: Sequence[Sequence[str]], k: int) -> Vocabulary:
    """``fit_vocabulary`` on documents that are already tokenized."""
    if not tokens:
        raise ValueError("cannot fit a vocabulary on an empty corpus")
    if k < 1:
        raise ValueError("k must be >= 1")
    tf = Counter()
    for toks in tokens:
        tf.update(toks)
    ranked = sorted(tf.items(), key=lambda kv: (-kv[1], kv[0]))
    if len(ranked) < k:
        warnings.warn(f"only {len(ranked)} distinct tokens available for k={k}", stacklevel=2)
    terms = tuple(t for t, _ in ranked[:k])
    return Vocabulary(terms, _smoothed_idf(tokens, terms), len(tokens))


def transform(docs: Sequence[str], vocabulary: Vocabulary, min_len: int = MIN_TOKEN_LEN) -> np.ndarray:
    """Raw counts times smoothed idf, each row scaled to unit L2 norm.

    Documents without any vocabulary term map to zero rows.
    """
    return transform_tokens([tokenize(d, min_len) for d in docs], vocabulary)


def transform_tokens(tokens: Sequence[Sequence[str]], vocabulary: Vocabulary) -> np.ndarray:
    index = vocabulary.index
    X = np.zeros((len(tokens), len(vocabulary)))
    for i, toks in enumerate(tokens):
        for t in toks:
            j = index.get(t)
            if j is not None:
                X[i, j] += 1.0
    X *= vocabulary.idf
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    np.divide(X, norms, out=X, where=norms > 0)
    return X


def featurize(corpus, k: int | None = None, fit_mask=None) -> FeatureMatrix:
    """Mask, fit a vocabulary (optionally on a subset) and transform a corpus."""
    docs = [mask_record(r) for r in corpus.records]
    if k is None:
        k = choose_k(float(np.mean([r.word_count for r in corpus.records])))
    fit_docs = docs if fit_mask is None else [d for d, m in zip(docs, fit_mask) if m]
    vocab = fit_vocabulary(fit_docs, k)
    labels = [
        {"sex": r.query.patron.sex, "race": r.query.patron.race,
         "patron_type": r.query.patron.patron_type, "run_seed": r.run_seed}
        for r in corpus.records
    ]
    return FeatureMatrix(vocab, transform(docs, vocab), labels)


def write_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    Path(path).write_text("".join(t + "\n" for t in vocab.terms), encoding="utf-8")


def write_matrix(fm: FeatureMatrix, path: str | Path, labels_path: str | Path, sparse: bool = False) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if sparse:
            w.writerow(["row", "col", "value"])
            for i, j in zip(*np.nonzero(fm.rows)):
                w.writerow([int(i), int(j), repr(float(fm.rows[i, j]))])
        else:
            w.writerow(list(fm.vocabulary.terms))
            for row in fm.rows:
                w.writerow([repr(float(v)) for v in row])
    with Path(labels_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["sex", "race", "patron_type", "run_seed"], lineterminator="\n")
        w.writeheader()
        w.writerows(fm.labels)
