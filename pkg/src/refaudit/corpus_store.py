"""Finalized corpora: failure filtering, deduplication and balance checks."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import CorpusError
from .llm_gateway import STATUS_OK, InteractionRecord, read_records, write_records
from .persona_synth import PATRON_TYPES, RACES, SEXES

AXES = {"sex": SEXES, "race": RACES, "patron_type": PATRON_TYPES}
IMBALANCE_THRESHOLD = 1.5


@dataclass
class Corpus:
    records: list[InteractionRecord]
    model_id: str
    per_seed_counts: dict[int, int] = field(default_factory=dict)

    def labels(self, axis: str) -> list[str]:
        if axis not in AXES:
            raise KeyError(f"unknown axis {axis!r}")
        return [getattr(r.query.patron, axis) for r in self.records]

    @property
    def seeds(self) -> list[int]:
        return [r.run_seed for r in self.records]

    @property
    def texts(self) -> list[str]:
        return [r.response_text for r in self.records]

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class BalanceReport:
    axis: str
    class_proportions: dict[str, float]
    imbalance_ratio: float

    @property
    def imbalanced(self) -> bool:
        return not self.imbalance_ratio <= IMBALANCE_THRESHOLD


def _dedup_key(text: str) -> str:
    return text.rstrip()


def finalize(records: Sequence[InteractionRecord]) -> Corpus:
    """Drop failed placeholders and collapse duplicate responses.

    Duplicates are byte-identical texts after trimming trailing whitespace;
    the survivor is the earliest record by (run_seed, index).
    """
    if not records:
        raise CorpusError("no records to finalize")
    models = {r.model_id for r in records}
    if len(models) != 1:
        raise CorpusError(f"records span several models: {sorted(models)}")
    ordered = sorted((r for r in records if r.status == STATUS_OK), key=lambda r: (r.run_seed, r.index))
    seen = set()
    kept = []
    for r in ordered:
        key = _dedup_key(r.response_text)
        if key in seen:
            continue
        seen.add(key)
        kept.append(r)
    if not kept:
        raise CorpusError("corpus is empty after filtering failures and duplicates")
    counts = Counter(r.run_seed for r in kept)
    return Corpus(kept, models.pop(), dict(sorted(counts.items())))


def balance(corpus: Corpus, axis: str) -> BalanceReport:
    if not len(corpus):
        raise CorpusError("empty corpus")
    counts = Counter(corpus.labels(axis))
    return balance_from_counts({lab: counts.get(lab, 0) for lab in AXES[axis]}, axis)


def balance_from_counts(counts: dict[str, int], axis: str = "") -> BalanceReport:
    total = sum(counts.values())
    props = {k: v / total for k, v in counts.items()}
    lo, hi = min(props.values()), max(props.values())
    ratio = math.inf if lo == 0 else hi / lo
    return BalanceReport(axis, props, ratio)


def length_stats(corpus: Corpus, confidence: float = 0.95) -> tuple[float, tuple[float, float]]:
    """Mean response length in words with a t-based confidence interval."""
    counts = np.array([r.word_count for r in corpus.records], dtype=float)
    return mean_ci(counts, confidence)


def mean_ci(values, confidence: float = 0.95) -> tuple[float, tuple[float, float]]:
    values = np.asarray(values, dtype=float)
    n = values.size
    if n == 0:
        raise CorpusError("no values")
    mean = float(values.mean())
    if n < 2:
        return mean, (mean, mean)
    sd = float(values.std(ddof=1))
    half = float(stats.t.ppf(0.5 + confidence / 2, n - 1)) * sd / math.sqrt(n)
    return mean, (mean - half, mean + half)


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_corpus(corpus: Corpus, directory: str | Path, config: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{corpus.model_id}.jsonl"
    write_records(corpus.records, path)
    manifest = {
        "model_id": corpus.model_id,
        "config_hash": config_hash(config or {}),
        "n_records": len(corpus),
        "per_seed_counts": {str(k): v for k, v in corpus.per_seed_counts.items()},
    }
    (directory / f"{corpus.model_id}.manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_corpus(path: str | Path) -> Corpus:
    return finalize(read_records(path))


def write_balance_csv(reports: Sequence[BalanceReport], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis", "label", "proportion", "ratio", "imbalanced"])
        for rep in reports:
            for label, p in rep.class_proportions.items():
                w.writerow([rep.axis, label, f"{p:.6f}", f"{rep.imbalance_ratio:.6f}", int(rep.imbalanced)])
