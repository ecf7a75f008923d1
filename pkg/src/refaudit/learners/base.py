"""Shared pieces for the diagnostic classifiers."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..errors import InputError

DUMP_VERSION = 1


def check_X(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InputError(f"feature matrix must be 2-D, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise InputError("feature matrix contains non-finite values")
    return X


def encode_labels(y) -> tuple[list, np.ndarray]:
    y = list(y)
    classes = sorted(set(y), key=str)
    lookup = {c: i for i, c in enumerate(classes)}
    return classes, np.array([lookup[v] for v in y], dtype=np.int64)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


@dataclass
class DiagnosticModel:
    """A fitted classifier.

    ``parameters`` holds the kind-specific fitted state; ``predict`` always
    returns labels drawn from ``classes``.
    """

    kind: str
    classes: list
    hyperparameters: dict
    parameters: dict[str, Any] = field(repr=False)
    history: dict[str, list] = field(default_factory=dict, repr=False)

    def decision_function(self, X) -> np.ndarray:
        from . import gbt, logreg, mlp

        X = check_X(X)
        scorer = {"logreg": logreg.scores, "mlp": mlp.scores, "gbt": gbt.scores}[self.kind]
        return scorer(self, X)

    def predict(self, X) -> list:
        S = self.decision_function(X)
        idx = np.argmax(S, axis=1)
        return [self.classes[i] for i in idx]

    def accuracy(self, X, y) -> float:
        pred = self.predict(X)
        y = list(y)
        return float(np.mean([a == b for a, b in zip(pred, y)])) if y else float("nan")

    def to_dict(self) -> dict:
        return {
            "version": DUMP_VERSION,
            "kind": self.kind,
            "classes": _jsonable(self.classes),
            "hyperparameters": _jsonable(self.hyperparameters),
            "parameters": _jsonable(self.parameters),
        }

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "DiagnosticModel":
        if d.get("version") != DUMP_VERSION:
            raise InputError(f"unsupported model dump version {d.get('version')!r}")
        # arrays come back as nested lists; the scorers coerce them lazily
        params = dict(d["parameters"])
        return cls(d["kind"], d["classes"], d["hyperparameters"], params)
