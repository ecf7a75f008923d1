"""Cross-model synthesis of Phase II results.

Consensus terms are those salient in at least two audited models. Each
model contributes one magnitude per term (its largest passing |beta|),
rows are scaled to a unit maximum, and the rows are grouped by Ward
agglomeration on Euclidean distance.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError

MIN_MODELS = 2
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class Merge:
    """One agglomeration step; ids follow the usual linkage convention.

    Leaves are 0..n-1 and the cluster formed at step s gets id n + s.
    ``height`` is sqrt(2 * cost), where ``cost`` is the increase in the
    within-cluster sum of squares caused by the merge.
    """

    left: int
    right: int
    height: float
    cost: float
    size: int


@dataclass
class Dendrogram:
    labels: list[str]
    merges: list[Merge]

    def members(self) -> list[tuple[int, ...]]:
        """Sorted leaf members of every cluster id (leaves first)."""
        out = [(i,) for i in range(len(self.labels))]
        for m in self.merges:
            out.append(tuple(sorted(out[m.left] + out[m.right])))
        return out

    def leaf_order(self) -> list[int]:
        n = len(self.labels)
        if n == 0:
            return []
        if not self.merges:
            return list(range(n))

        def walk(cid):
            if cid < n:
                return [cid]
            m = self.merges[cid - n]
            return walk(m.left) + walk(m.right)

        return walk(n + len(self.merges) - 1)

    def to_nested(self) -> str:
        """Parenthesized merge tree, e.g. ``((a,b):1,c):12.5``."""
        n = len(self.labels)
        if n == 0:
            return "()"
        if n == 1:
            return self.labels[0]

        def text(cid):
            if cid < n:
                return self.labels[cid]
            m = self.merges[cid - n]
            return f"({text(m.left)},{text(m.right)}):{_fmt(m.height)}"

        return text(n + len(self.merges) - 1)


@dataclass
class ConsensusMatrix:
    features: list[str]
    models: list[str]
    raw: np.ndarray
    values: np.ndarray
    dendrogram: Dendrogram | None = None

    @property
    def empty(self) -> bool:
        return not self.features


@dataclass
class AggregationTable:
    reference_class: str
    cells: dict[tuple[str, str], tuple[float, int]] = field(default_factory=dict)

    def get(self, class_label: str, term: str) -> float | None:
        cell = self.cells.get((class_label, term))
        return None if cell is None else cell[0]

    def rows(self):
        for (c, t), (mean, count) in sorted(self.cells.items()):
            yield c, t, mean, count


def _fmt(x: float) -> str:
    return repr(round(float(x), 12))


def passing_terms(features) -> set[str]:
    return {f.term for f in features if f.passes}


def consensus_terms(salience: Mapping[str, Sequence], min_models: int = MIN_MODELS) -> list[str]:
    counts = defaultdict(int)
    for feats in salience.values():
        for t in passing_terms(feats):
            counts[t] += 1
    return sorted(t for t, c in counts.items() if c >= min_models)


def row_normalize(values) -> np.ndarray:
    """Scale each row by its largest absolute entry; all-zero rows stay zero."""
    V = np.asarray(values, dtype=float)
    scale = np.max(np.abs(V), axis=1, keepdims=True) if V.size else np.zeros((V.shape[0], 1))
    out = np.zeros_like(V)
    np.divide(V, scale, out=out, where=scale > 0)
    return out


def consensus(salience: Mapping[str, Sequence], min_models: int = MIN_MODELS) -> ConsensusMatrix:
    """Consensus filter, max-|beta| collapse, row scaling and clustering.

    ``salience`` maps model id to that model's salient-feature list; the
    model order of the mapping is kept for the matrix columns.
    """
    if len(salience) < 2:
        raise InputError("consensus needs at least two models")
    models = list(salience)
    terms = consensus_terms(salience, min_models)
    raw = np.zeros((len(terms), len(models)))
    index = {t: i for i, t in enumerate(terms)}
    for j, mdl in enumerate(models):
        for f in salience[mdl]:
            i = index.get(f.term)
            if i is not None and f.passes:
                raw[i, j] = max(raw[i, j], abs(f.beta))
    keep = np.flatnonzero(np.any(raw > 0, axis=1))
    terms = [terms[i] for i in keep]
    raw = raw[keep]
    values = row_normalize(raw)
    dendro = cluster(values, terms) if len(terms) >= 2 else (Dendrogram(terms, []) if terms else None)
    return ConsensusMatrix(terms, models, raw, values, dendro)


def _pair_key(members, a, b):
    ka, kb = members[a], members[b]
    return (ka, kb) if ka <= kb else (kb, ka)


def cluster(rows, labels: Sequence[str] | None = None) -> Dendrogram:
    """Ward agglomeration with Lance-Williams updates of squared distances.

    Among pairs whose merge cost ties (relative 1e-12), the pair whose
    sorted leaf-member tuples are lexicographically smallest merges first;
    the cluster with the smaller member tuple becomes the left child.
    """
    X = np.asarray(rows, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InputError("clustering needs at least 2 rows")
    n = X.shape[0]
    labels = list(labels) if labels is not None else [str(i) for i in range(n)]
    diff = X[:, None, :] - X[None, :, :]
    # D holds the Lance-Williams "Ward distance" squared, i.e. 2 * merge cost
    D = np.einsum("ijk,ijk->ij", diff, diff)
    size = {i: 1 for i in range(n)}
    members = {i: (i,) for i in range(n)}
    ids = list(range(n))
    dist = {(a, b): D[a, b] for a in range(n) for b in range(a + 1, n)}
    merges = []
    next_id = n
    while len(ids) > 1:
        best = min(dist.values())
        tol = TIE_RTOL * max(1.0, abs(best))
        cands = [(a, b) for (a, b), d in dist.items() if d <= best + tol]
        a, b = min(cands, key=lambda p: _pair_key(members, *p))
        if members[a] > members[b]:
            a, b = b, a
        dab = dist[(a, b) if (a, b) in dist else (b, a)]
        new = next_id
        next_id += 1
        na, nb = size[a], size[b]
        ids.remove(a)
        ids.remove(b)
        for k in ids:
            nk = size[k]
            dka = dist[(k, a) if (k, a) in dist else (a, k)]
            dkb = dist[(k, b) if (k, b) in dist else (b, k)]
            dist[(k, new)] = ((na + nk) * dka + (nb + nk) * dkb - nk * dab) / (na + nb + nk)
        dist = {p: d for p, d in dist.items() if a not in p and b not in p}
        size[new] = na + nb
        members[new] = tuple(sorted(members[a] + members[b]))
        ids.append(new)
        dab = max(dab, 0.0)
        merges.append(Merge(a, b, math.sqrt(dab), 0.5 * dab, na + nb))
    return Dendrogram(labels, merges)


def aggregate(salience: Mapping[str, Sequence], reference_class: str = "Undergraduate",
              terms: Sequence[str] | None = None) -> AggregationTable:
    """Mean beta per (class, term) over the models where that cell passed.

    ``terms`` defaults to the consensus terms of ``salience``. Cells that
    pass in no model are left out.
    """
    if terms is None:
        terms = consensus_terms(salience) if len(salience) >= 2 else sorted(
            set().union(*(passing_terms(f) for f in salience.values())))
    wanted = set(terms)
    acc = defaultdict(list)
    for feats in salience.values():
        for f in feats:
            if f.passes and f.term in wanted and f.class_label != reference_class:
                acc[(f.class_label, f.term)].append(f.beta)
    cells = {key: (float(np.mean(v)), len(v)) for key, v in acc.items()}
    return AggregationTable(reference_class, cells)


def write_matrix(cm: ConsensusMatrix, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["term"] + cm.models)
        order = cm.dendrogram.leaf_order() if cm.dendrogram else range(len(cm.features))
        for i in order:
            w.writerow([cm.features[i]] + [_fmt(v) for v in cm.values[i]])


def write_merges(dendro: Dendrogram | None, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "left", "right", "left_label", "right_label", "height", "cost", "size"])
        if dendro is None:
            return
        n = len(dendro.labels)

        def name(c):
            return dendro.labels[c] if c < n else f"cluster{c}"

        for s, m in enumerate(dendro.merges):
            w.writerow([s, m.left, m.right, name(m.left), name(m.right), _fmt(m.height), _fmt(m.cost), m.size])


def write_aggregation(table: AggregationTable, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "term", "mean_beta", "n_models"])
        for c, t, mean, count in table.rows():
            w.writerow([c, t, _fmt(mean), count])
