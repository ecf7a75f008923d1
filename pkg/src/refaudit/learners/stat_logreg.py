"""Unpenalized multinomial logistic regression with Wald inference."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from ..errors import InputError
from .base import check_X

log = logging.getLogger(__name__)

SEPARATION_BETA = 15.0
ALIAS_TOL = 1e-7


@dataclass
class StatModelFit:
    reference_class: str
    classes: list[str]
    terms: list[str]
    coefficients: np.ndarray
    std_errors: np.ndarray
    p_values: np.ndarray
    intercepts: np.ndarray
    converged: bool
    n_iter: int
    loglik: float
    singular: bool = False
    quasi_separated_terms: set = field(default_factory=set)
    aliased_terms: tuple = ()

    @property
    def comparison_classes(self) -> list[str]:
        return [c for c in self.classes if c != self.reference_class]

    def coef(self, class_label: str, term: str) -> float:
        i = self.comparison_classes.index(class_label)
        return float(self.coefficients[i, self.terms.index(term)])

    def rows(self):
        """Yield (class, term, beta, se, p, quasi_separated) for every tested cell."""
        for i, c in enumerate(self.comparison_classes):
            for j, t in enumerate(self.terms):
                flagged = (c, t) in self.quasi_separated_terms
                yield c, t, float(self.coefficients[i, j]), float(self.std_errors[i, j]), float(self.p_values[i, j]), flagged


def aliased_columns(X, tol: float = ALIAS_TOL) -> np.ndarray:
    """Mask of columns lying in the span of the intercept and earlier columns.

    Columns are visited in order, so the earlier of two collinear terms is
    the one kept.
    """
    n, p = X.shape
    basis = [np.full(n, 1.0 / np.sqrt(n))] if n else []
    out = np.zeros(p, dtype=bool)
    for j in range(p):
        v = X[:, j].astype(float)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            out[j] = True
            continue
        r = v.copy()
        for _ in range(2):  # re-orthogonalize once for stability
            for q in basis:
                r -= (q @ r) * q
        rn = np.linalg.norm(r)
        if rn <= tol * norm:
            out[j] = True
        else:
            basis.append(r / rn)
    return out


def wald_p(beta, se):
    """Two-sided normal-reference p-value for beta / se."""
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(np.asarray(beta, dtype=float) / np.asarray(se, dtype=float))
    p = 2.0 * stats.norm.sf(z)
    return np.where(np.isfinite(p), p, 1.0)


def _loglik(B, Xa, Yc):
    eta = np.hstack([np.zeros((Xa.shape[0], 1)), Xa @ B.T])
    return float(np.sum(Yc * eta) - np.sum(logsumexp(eta, axis=1)))


def _probs(B, Xa):
    eta = np.hstack([np.zeros((Xa.shape[0], 1)), Xa @ B.T])
    eta -= eta.max(axis=1, keepdims=True)
    P = np.exp(eta)
    P /= P.sum(axis=1, keepdims=True)
    return P[:, 1:]


def information(B, Xa):
    """Observed (= expected) information matrix, class-major parameter order."""
    P = _probs(B, Xa)
    m, q = P.shape[1], Xa.shape[1]
    info = np.empty((m * q, m * q))
    for a in range(m):
        for b in range(a, m):
            w = P[:, a] * ((a == b) - P[:, b])
            blk = Xa.T @ (Xa * w[:, None])
            info[a * q:(a + 1) * q, b * q:(b + 1) * q] = blk
            info[b * q:(b + 1) * q, a * q:(a + 1) * q] = blk.T
    return info


def fit_stat_logreg(X, y, reference_class, terms=None, max_iter: int = 200, tol: float = 1e-8) -> StatModelFit:
    """Maximum-likelihood fit by Newton-Raphson with step halving.

    Coefficients are log-odds of each comparison class against
    ``reference_class``. Standard errors come from the inverse information
    at the optimum (a pseudo-inverse when it is singular).
    """
    X = check_X(X)
    y = list(y)
    if reference_class not in y:
        raise InputError(f"reference class {reference_class!r} absent from labels")
    others = sorted({c for c in y if c != reference_class}, key=str)
    if not others:
        raise InputError("need at least one class besides the reference")
    classes = [reference_class] + others
    terms = list(terms) if terms is not None else [f"x{j}" for j in range(X.shape[1])]
    n, p_all = X.shape
    if len(terms) != p_all:
        raise InputError("terms must match the number of feature columns")
    alias = aliased_columns(X)
    if alias.any():
        log.info("dropping %d aliased term(s): %s", int(alias.sum()),
                 ", ".join(str(t) for t, a in zip(terms, alias) if a))
    keep = np.flatnonzero(~alias)
    X = X[:, keep]
    p = X.shape[1]
    Xa = np.hstack([np.ones((n, 1)), X])
    lookup = {c: i for i, c in enumerate(classes)}
    yi = np.array([lookup[v] for v in y])
    Yfull = np.eye(len(classes))[yi]
    Yc = Yfull[:, 1:]
    m, q = len(others), p + 1

    # start from the class log-frequency intercepts
    B = np.zeros((m, q))
    freq = Yfull.mean(axis=0)
    B[:, 0] = np.log(freq[1:] / freq[0])
    ll = _loglik(B, Xa, Yfull)
    converged = False
    singular = False
    it = 0
    for it in range(1, max_iter + 1):
        P = _probs(B, Xa)
        grad = ((Yc - P).T @ Xa).ravel()
        info = information(B, Xa)
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, grad, rcond=None)[0]
        t = 1.0
        while True:
            B_new = B + t * step.reshape(m, q)
            ll_new = _loglik(B_new, Xa, Yfull)
            if ll_new >= ll - 1e-12 or t < 1e-8:
                break
            t *= 0.5
        change = float(np.max(np.abs(t * step))) if step.size else 0.0
        B, ll_old, ll = B_new, ll, ll_new
        if change < tol or abs(ll - ll_old) < tol * 1e-4 * (1.0 + abs(ll)):
            converged = True
            break

    info = information(B, Xa)
    cond = np.linalg.cond(info)
    if not np.isfinite(cond) or cond > 1e14:
        singular = True
        log.warning("information matrix is singular (cond=%.3g); using a pseudo-inverse", cond)
        cov = np.linalg.pinv(info, hermitian=True)
    else:
        cov = np.linalg.inv(info)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None)).reshape(m, q)
    pv = wald_p(B, se)
    # aliased terms have no estimable coefficient: NaN estimates, p = 1
    coef = np.full((m, p_all), np.nan)
    se_t = np.full((m, p_all), np.nan)
    p_t = np.ones((m, p_all))
    coef[:, keep], se_t[:, keep], p_t[:, keep] = B[:, 1:], se[:, 1:], pv[:, 1:]
    flagged = set()
    for i, c in enumerate(others):
        for j in keep:
            if not converged or abs(coef[i, j]) > SEPARATION_BETA:
                flagged.add((c, terms[j]))
    if not converged:
        log.warning("Newton iterations stopped at max_iter=%d without converging", max_iter)
    return StatModelFit(reference_class, classes, terms, coef, se_t, p_t, B[:, 0], converged, it, ll,
                        singular, flagged, tuple(t for t, a in zip(terms, alias) if a))


def odds_ratio(beta: float) -> float:
    return float(np.exp(beta))


def format_odds_ratio(beta: float, digits: int = 2) -> str:
    """Odds ratio exp(beta) to ``digits`` significant figures."""
    return f"{odds_ratio(beta):.{digits}g}"
