"""Diagnostic classifiers and the inferential logistic model."""
from .base import DiagnosticModel
from .gbt import fit_gbt
from .logreg import fit_logreg
from .mlp import fit_mlp
from .stat_logreg import StatModelFit, fit_stat_logreg, format_odds_ratio, odds_ratio, wald_p

KINDS = ("logreg", "mlp", "gbt")


def fit_diagnostic(kind: str, X, y, seed: int = 0, **hyper) -> DiagnosticModel:
    """Fit one of the three diagnostic classifiers with its default settings."""
    if kind == "logreg":
        return fit_logreg(X, y, **hyper)
    if kind == "mlp":
        return fit_mlp(X, y, seed=seed, **hyper)
    if kind == "gbt":
        return fit_gbt(X, y, seed=seed, **hyper)
    raise ValueError(f"unknown classifier kind {kind!r}")


__all__ = ["DiagnosticModel", "StatModelFit", "KINDS", "fit_diagnostic", "fit_gbt", "fit_logreg",
           "fit_mlp", "fit_stat_logreg", "format_odds_ratio", "odds_ratio", "wald_p"]
