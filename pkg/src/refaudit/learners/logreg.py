"""One-vs-rest L2-regularized logistic regression (liblinear-style)."""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from .base import DiagnosticModel, check_X, encode_labels


def _objective(w, Xa, s, lam):
    m = s * (Xa @ w)
    # log(1 + exp(-m)) computed stably
    loss = np.logaddexp(0.0, -m).sum()
    return 0.5 * lam * (w @ w) + loss


def fit_binary(Xa: np.ndarray, s: np.ndarray, lam: float, max_iter: int = 1000, tol: float = 1e-6):
    """Newton iterations with backtracking for ``lam/2 |w|^2 + sum log(1+exp(-s w.x))``.

    ``s`` holds +1/-1 targets. Returns (w, n_iter, grad_norm).
    """
    n, p = Xa.shape
    w = np.zeros(p)
    f = _objective(w, Xa, s, lam)
    gnorm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        m = s * (Xa @ w)
        sig = expit(-m)
        grad = lam * w - Xa.T @ (s * sig)
        gnorm = float(np.linalg.norm(grad))
        if gnorm < tol:
            break
        d = sig * (1.0 - sig)
        H = Xa.T @ (Xa * d[:, None])
        H[np.diag_indices_from(H)] += lam
        step = np.linalg.solve(H, grad)
        t = 1.0
        slope = grad @ step
        while True:
            w_new = w - t * step
            f_new = _objective(w_new, Xa, s, lam)
            if f_new <= f - 1e-4 * t * slope or t < 1e-10:
                break
            t *= 0.5
        w, f = w_new, f_new
    return w, it, gnorm


def _augment(X):
    # intercept as a constant feature that is regularized like the rest
    return np.hstack([X, np.ones((X.shape[0], 1))])


def fit_logreg(X, y, C: float = 1.0, max_iter: int = 1000, tol: float = 1e-6) -> DiagnosticModel:
    X = check_X(X)
    classes, yi = encode_labels(y)
    hp = {"C": C, "penalty": "l2", "multiclass": "ovr", "max_iter": max_iter, "tol": tol}
    if len(classes) == 1:
        return DiagnosticModel("logreg", classes, hp, {"coef": np.zeros((0, X.shape[1] + 1)), "constant": True})
    Xa = _augment(X)
    lam = 1.0 / C
    targets = [1] if len(classes) == 2 else range(len(classes))
    W, iters = [], []
    for k in targets:
        s = np.where(yi == k, 1.0, -1.0)
        w, it, _ = fit_binary(Xa, s, lam, max_iter, tol)
        W.append(w)
        iters.append(it)
    return DiagnosticModel("logreg", classes, hp, {"coef": np.array(W), "n_iter": iters, "constant": False})


def scores(model: DiagnosticModel, X: np.ndarray) -> np.ndarray:
    if model.parameters.get("constant"):
        return np.zeros((X.shape[0], 1))
    S = _augment(X) @ np.asarray(model.parameters["coef"]).T
    if len(model.classes) == 2:
        # class 0 scores 0, class 1 scores w.x; argmax ties go to class 0
        return np.hstack([np.zeros_like(S), S])
    return S
