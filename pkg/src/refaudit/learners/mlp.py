"""Two-hidden-layer ReLU network with softmax output, trained by Adam."""
from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from ..errors import InputError, OptimizationError
from .base import DiagnosticModel, check_X, encode_labels

ADAM_LR = 1e-3
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
BATCH_SIZE = 200
PATIENCE = 10
TOL = 1e-4
VALIDATION_FRACTION = 0.1


def init_params(sizes, rng: np.random.Generator) -> list[np.ndarray]:
    """Glorot-uniform weights and zero biases, as [W1, b1, W2, b2, ...]."""
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def forward(params, X):
    """Return (logits, hidden activations including the input)."""
    acts = [X]
    h = X
    n_layers = len(params) // 2
    for i in range(n_layers):
        z = h @ params[2 * i] + params[2 * i + 1]
        if i < n_layers - 1:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            h = z
    return h, acts


def loss_and_grads(params, X, Y, alpha):
    """Mean cross-entropy plus ``alpha/(2n) * sum |W|^2`` and its gradients.

    ``Y`` is one-hot. Biases are not penalized.
    """
    n = X.shape[0]
    logits, acts = forward(params, X)
    lse = logsumexp(logits, axis=1, keepdims=True)
    logp = logits - lse
    loss = -np.sum(Y * logp) / n
    weights = params[0::2]
    loss += 0.5 * alpha * sum(np.sum(W * W) for W in weights) / n

    grads = [None] * len(params)
    delta = (np.exp(logp) - Y) / n
    n_layers = len(params) // 2
    for i in reversed(range(n_layers)):
        W = params[2 * i]
        grads[2 * i] = acts[i].T @ delta + alpha * W / n
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ W.T) * (acts[i] > 0)
    return loss, grads


class _Adam:
    def __init__(self, params, lr=ADAM_LR, betas=ADAM_BETAS, eps=ADAM_EPS):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        lr_t = self.lr * np.sqrt(1 - self.b2 ** self.t) / (1 - self.b1 ** self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= lr_t * m / (np.sqrt(v) + self.eps)


def fit_mlp(
    X,
    y,
    hidden=(128, 64),
    alpha: float = 1e-4,
    max_iter: int = 2000,
    early_stopping: bool = True,
    seed: int = 0,
    batch_size: int = BATCH_SIZE,
) -> DiagnosticModel:
    """Train the network; ``max_iter`` counts epochs.

    With early stopping the last 10% of the seed-shuffled rows form a
    validation split; training stops after 10 epochs without a validation
    accuracy gain above 1e-4 and the best weights are restored. Without it,
    the same patience rule applies to the training loss.
    """
    X = check_X(X)
    classes, yi = encode_labels(y)
    hp = {"hidden": list(hidden), "alpha": alpha, "max_iter": max_iter,
          "early_stopping": early_stopping, "seed": seed, "batch_size": batch_size}
    K = len(classes)
    n = X.shape[0]
    if early_stopping and n < 20:
        raise InputError("early stopping needs at least 20 samples")
    rng = np.random.default_rng(seed)
    Y = np.eye(max(K, 1))[yi]

    perm = rng.permutation(n)
    if early_stopping:
        n_val = max(1, int(round(VALIDATION_FRACTION * n)))
        tr, va = perm[:-n_val], perm[-n_val:]
    else:
        tr, va = perm, perm[:0]
    Xtr, Ytr = X[tr], Y[tr]

    params = init_params([X.shape[1], *hidden, max(K, 1)], rng)
    opt = _Adam(params)
    bs = min(batch_size, len(tr))
    best_score, best_params, stall = -np.inf, [p.copy() for p in params], 0
    best_loss = np.inf
    losses, val_scores = [], []
    for epoch in range(max_iter):
        order = rng.permutation(len(tr))
        total = 0.0
        for start in range(0, len(tr), bs):
            idx = order[start:start + bs]
            loss, grads = loss_and_grads(params, Xtr[idx], Ytr[idx], alpha)
            if not np.isfinite(loss):
                raise OptimizationError(
                    f"MLP loss diverged at epoch {epoch}, batch starting {start}: loss={loss}, "
                    f"max |param|={max(float(np.abs(p).max()) for p in params):.3g}"
                )
            opt.step(params, grads)
            total += loss * len(idx)
        losses.append(total / len(tr))
        if early_stopping:
            logits, _ = forward(params, X[va])
            score = float(np.mean(np.argmax(logits, axis=1) == yi[va]))
            val_scores.append(score)
            if score > best_score + TOL:
                best_score, best_params, stall = score, [p.copy() for p in params], 0
            else:
                stall += 1
        else:
            if losses[-1] < best_loss - TOL:
                best_loss, stall = losses[-1], 0
            else:
                stall += 1
        if stall >= PATIENCE:
            break
    if early_stopping:
        params = best_params
    return DiagnosticModel("mlp", classes, hp, {"weights": params},
                           history={"loss": losses, "validation_accuracy": val_scores})


def scores(model: DiagnosticModel, X: np.ndarray) -> np.ndarray:
    params = [np.asarray(p, dtype=float) for p in model.parameters["weights"]]
    logits, _ = forward(params, X)
    return logits
