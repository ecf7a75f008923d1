"""Softmax gradient boosting with exact greedy regression trees.

Each round fits one depth-limited tree per class on the softmax gradient
and hessian. Split search walks pre-sorted non-zero column entries and
treats the implicit zeros of a column as a single block, so its cost
scales with the number of non-zeros rather than rows x columns.
"""
from __future__ import annotations

import numpy as np
from numba import njit
from scipy.special import logsumexp, softmax

from .base import DiagnosticModel, check_X, encode_labels

HESS_FLOOR = 1e-16


@njit(cache=True, error_model="numpy", inline="always")
def soft_threshold(G, alpha):
    if G > alpha:
        return G - alpha
    if G < -alpha:
        return G + alpha
    return 0.0


@njit(cache=True, error_model="numpy")
def leaf_weight(G, H, lam, alpha):
    """Newton leaf value with L1 shrinkage of the gradient sum."""
    return -soft_threshold(G, alpha) / (H + lam)


@njit(cache=True, error_model="numpy", inline="always")
def _score(G, H, lam, alpha):
    t = soft_threshold(G, alpha)
    return t * t / (H + lam)


@njit(cache=True, error_model="numpy", inline="always")
def split_gain(GL, HL, GR, HR, lam, alpha):
    return 0.5 * (_score(GL, HL, lam, alpha) + _score(GR, HR, lam, alpha)
                  - _score(GL + GR, HL + HR, lam, alpha))


@njit(cache=True, error_model="numpy", inline="always")
def _candidate(GL, HL, CL, G, H, C, parent, lam, alpha, mcw):
    """Gain of sending the accumulated left block left; -1 when a child is too small."""
    if CL < 1 or C - CL < 1 or HL < mcw or H - HL < mcw:
        return -1.0
    return 0.5 * (_score(GL, HL, lam, alpha) + _score(G - GL, H - HL, lam, alpha) - parent)


@njit(cache=True, error_model="numpy", inline="always")
def _may_beat(GL, HL, G, H, lam, alpha, bar):
    """Division-free screen for ``S_L + S_R > bar``, loose by a relative 1e-9.

    Only candidates passing the screen get the exact gain computed.
    """
    hl = HL + lam
    hr = H - HL + lam
    tl = soft_threshold(GL, alpha)
    tr = soft_threshold(G - GL, alpha)
    return tl * tl * hr + tr * tr * hl >= bar * hl * hr * (1.0 - 1e-9)


@njit(cache=True, error_model="numpy")
def build_tree(X, indptr, rows, vals, g, h, in_sample, cols, max_depth, lam, alpha, mcw, er, ev, tr, tv):
    """Grow one tree depth-wise by exact greedy search.

    Every column keeps its in-sample non-zero entries sorted by value and
    partitioned into contiguous per-node segments; the zero entries of a
    node form one implicit block whose sums are the node totals minus the
    segment sums. Ties keep the first (column, threshold) in scan order.
    ``er``/``tr`` (int64) and ``ev``/``tv`` (float64) are scratch buffers of
    length len(rows), reused across trees to avoid reallocating them.
    Returns (feature, threshold, is_leaf, value) in heap node order.
    """
    n = X.shape[0]
    ncol = cols.shape[0]
    max_nodes = 2 ** (max_depth + 1) - 1
    feat = np.full(max_nodes, -1, dtype=np.int64)
    thr = np.zeros(max_nodes)
    value = np.zeros(max_nodes)
    is_leaf = np.zeros(max_nodes, dtype=np.bool_)
    open_ = np.zeros(max_nodes, dtype=np.bool_)
    G = np.zeros(max_nodes)
    H = np.zeros(max_nodes)
    C = np.zeros(max_nodes, dtype=np.int64)
    pos = np.full(n, -1, dtype=np.int64)
    for r in range(n):
        if in_sample[r]:
            pos[r] = 0
            G[0] += g[r]
            H[0] += h[r]
            C[0] += 1
    open_[0] = True

    # the filtering and partition loops below are written branch-free: both
    # destinations are stored and only the cursor advance depends on the row
    seg_lo = np.zeros((ncol, max_nodes), dtype=np.int64)
    seg_hi = np.zeros((ncol, max_nodes), dtype=np.int64)
    # gradient and hessian sums of each segment's non-zero entries
    seg_g = np.zeros((ncol, max_nodes))
    seg_h = np.zeros((ncol, max_nodes))
    k = 0
    for c in range(ncol):
        f = cols[c]
        seg_lo[c, 0] = k
        sg = 0.0
        sh = 0.0
        for e in range(indptr[f], indptr[f + 1]):
            r = rows[e]
            w = 1 if in_sample[r] else 0
            er[k] = r
            ev[k] = vals[e]
            sg += w * g[r]
            sh += w * h[r]
            k += w
        seg_hi[c, 0] = k
        seg_g[c, 0] = sg
        seg_h[c, 0] = sh

    for depth in range(max_depth):
        lo = 2 ** depth - 1
        hi = 2 ** (depth + 1) - 1
        n_split = 0
        for nid in range(lo, hi):
            if not open_[nid]:
                continue
            open_[nid] = False
            Gn = G[nid]
            Hn = H[nid]
            Cn = C[nid]
            parent = _score(Gn, Hn, lam, alpha)
            best = 0.0
            bf = -1
            bt = 0.0
            for c in range(ncol):
                s0 = seg_lo[c, nid]
                s1 = seg_hi[c, nid]
                nzg = seg_g[c, nid]
                nzh = seg_h[c, nid]
                zc = Cn - (s1 - s0)
                gl = 0.0
                hl = 0.0
                cl = 0
                lastv = 0.0
                zdone = False
                for i in range(s0, s1):
                    v = ev[i]
                    if v > 0.0 and not zdone:
                        if zc > 0:
                            if cl > 0:
                                gain = _candidate(gl, hl, cl, Gn, Hn, Cn, parent, lam, alpha, mcw)
                                if gain > best:
                                    best = gain
                                    bf = c
                                    bt = 0.5 * lastv
                            gl += Gn - nzg
                            hl += Hn - nzh
                            cl += zc
                            lastv = 0.0
                        zdone = True
                    if cl > 0 and v != lastv and _may_beat(gl, hl, Gn, Hn, lam, alpha, 2.0 * best + parent):
                        gain = _candidate(gl, hl, cl, Gn, Hn, Cn, parent, lam, alpha, mcw)
                        if gain > best:
                            best = gain
                            bf = c
                            bt = 0.5 * (lastv + v)
                    r = er[i]
                    gl += g[r]
                    hl += h[r]
                    cl += 1
                    lastv = v
                # non-zeros all negative: the zero block sits to the right
                if not zdone and zc > 0 and cl > 0:
                    gain = _candidate(gl, hl, cl, Gn, Hn, Cn, parent, lam, alpha, mcw)
                    if gain > best:
                        best = gain
                        bf = c
                        bt = 0.5 * lastv
            if bf < 0:
                is_leaf[nid] = True
            else:
                feat[nid] = cols[bf]
                thr[nid] = bt
                open_[2 * nid + 1] = True
                open_[2 * nid + 2] = True
                n_split += 1
        if n_split == 0:
            break
        for r in range(n):
            nid = pos[r]
            if nid >= lo and nid < hi and feat[nid] >= 0:
                child = 2 * nid + 1 if X[r, feat[nid]] < thr[nid] else 2 * nid + 2
                pos[r] = child
                G[child] += g[r]
                H[child] += h[r]
                C[child] += 1
        if depth == max_depth - 1:
            break
        # stable partition of every column segment into the two child segments
        for nid in range(lo, hi):
            if feat[nid] < 0:
                continue
            left = 2 * nid + 1
            for c in range(ncol):
                s0 = seg_lo[c, nid]
                s1 = seg_hi[c, nid]
                a = s0
                b = 0
                lg = 0.0
                lh = 0.0
                for i in range(s0, s1):
                    r = er[i]
                    v = ev[i]
                    w = 1 if pos[r] == left else 0
                    er[a] = r
                    ev[a] = v
                    tr[b] = r
                    tv[b] = v
                    lg += w * g[r]
                    lh += w * h[r]
                    a += w
                    b += 1 - w
                for j in range(b):
                    er[a + j] = tr[j]
                    ev[a + j] = tv[j]
                seg_lo[c, left] = s0
                seg_hi[c, left] = a
                seg_g[c, left] = lg
                seg_h[c, left] = lh
                seg_g[c, left + 1] = seg_g[c, nid] - lg
                seg_h[c, left + 1] = seg_h[c, nid] - lh
                seg_lo[c, left + 1] = a
                seg_hi[c, left + 1] = s1

    for nid in range(max_nodes):
        if open_[nid]:
            is_leaf[nid] = True
            open_[nid] = False
        if is_leaf[nid]:
            value[nid] = leaf_weight(G[nid], H[nid], lam, alpha)
    return feat, thr, is_leaf, value


@njit(cache=True, error_model="numpy")
def predict_trees(X, feats, thrs, leaves, values, tree_class, n_classes, lr):
    n = X.shape[0]
    out = np.zeros((n, n_classes))
    for t in range(feats.shape[0]):
        k = tree_class[t]
        for r in range(n):
            nid = 0
            while not leaves[t, nid]:
                nid = 2 * nid + 1 if X[r, feats[t, nid]] < thrs[t, nid] else 2 * nid + 2
            out[r, k] += lr * values[t, nid]
    return out


def sorted_nonzeros(X: np.ndarray):
    """Column-wise non-zero entries in ascending value order (CSC layout)."""
    n, p = X.shape
    indptr = np.zeros(p + 1, dtype=np.int64)
    rows, vals = [], []
    for f in range(p):
        nz = np.flatnonzero(X[:, f])
        order = nz[np.argsort(X[nz, f], kind="stable")]
        rows.append(order)
        vals.append(X[order, f])
        indptr[f + 1] = indptr[f] + len(order)
    return (indptr,
            np.concatenate(rows).astype(np.int64) if rows else np.zeros(0, np.int64),
            np.concatenate(vals) if vals else np.zeros(0))


def log_loss(F: np.ndarray, yi: np.ndarray) -> float:
    return float(np.mean(logsumexp(F, axis=1) - F[np.arange(len(yi)), yi]))


def fit_gbt(
    X,
    y,
    n_estimators: int = 100,
    lr: float = 0.1,
    max_depth: int = 4,
    subsample: float = 0.8,
    colsample: float = 0.8,
    reg_alpha: float = 0.1,
    reg_lambda: float = 1.0,
    min_child_weight: float = 1.0,
    seed: int = 0,
) -> DiagnosticModel:
    X = check_X(X)
    classes, yi = encode_labels(y)
    hp = {"n_estimators": n_estimators, "lr": lr, "max_depth": max_depth, "subsample": subsample,
          "colsample": colsample, "reg_alpha": reg_alpha, "reg_lambda": reg_lambda,
          "min_child_weight": min_child_weight, "seed": seed}
    n, p = X.shape
    K = len(classes)
    rng = np.random.default_rng(seed)
    indptr, rows, vals = sorted_nonzeros(X)
    work = (np.empty(len(rows), dtype=np.int64), np.empty(len(rows)),
            np.empty(len(rows), dtype=np.int64), np.empty(len(rows)))
    Y = np.eye(K)[yi]
    F = np.zeros((n, K))
    n_rows = max(1, int(round(subsample * n)))
    n_cols = max(1, int(colsample * p))
    feats, thrs, leaves, values, tree_class = [], [], [], [], []
    history = [log_loss(F, yi)]
    for _ in range(n_estimators if K > 1 else 0):
        P = softmax(F, axis=1)
        update = np.zeros_like(F)
        for k in range(K):
            g = P[:, k] - Y[:, k]
            h = np.maximum(P[:, k] * (1.0 - P[:, k]), HESS_FLOOR)
            in_sample = np.zeros(n, dtype=np.bool_)
            in_sample[rng.choice(n, n_rows, replace=False) if n_rows < n else slice(None)] = True
            cols = np.sort(rng.choice(p, n_cols, replace=False)) if n_cols < p else np.arange(p)
            tree = build_tree(X, indptr, rows, vals, g, h, in_sample, cols.astype(np.int64),
                              max_depth, reg_lambda, reg_alpha, min_child_weight, *work)
            feats.append(tree[0]); thrs.append(tree[1]); leaves.append(tree[2]); values.append(tree[3])
            tree_class.append(k)
            update += predict_trees(X, tree[0][None], tree[1][None], tree[2][None], tree[3][None],
                                    np.array([k], dtype=np.int64), K, lr)
        F += update
        history.append(log_loss(F, yi))
    max_nodes = 2 ** (max_depth + 1) - 1
    params = {
        "feature": np.array(feats, dtype=np.int64).reshape(-1, max_nodes),
        "threshold": np.array(thrs, dtype=float).reshape(-1, max_nodes),
        "is_leaf": np.array(leaves, dtype=bool).reshape(-1, max_nodes),
        "value": np.array(values, dtype=float).reshape(-1, max_nodes),
        "tree_class": np.array(tree_class, dtype=np.int64),
    }
    return DiagnosticModel("gbt", classes, hp, params, history={"log_loss": history})


def scores(model: DiagnosticModel, X: np.ndarray) -> np.ndarray:
    p = model.parameters
    K = len(model.classes)
    if len(p["tree_class"]) == 0:
        return np.zeros((X.shape[0], K))
    return predict_trees(
        np.ascontiguousarray(X), np.asarray(p["feature"], dtype=np.int64), np.asarray(p["threshold"], dtype=float),
        np.asarray(p["is_leaf"], dtype=np.bool_), np.asarray(p["value"], dtype=float),
        np.asarray(p["tree_class"], dtype=np.int64), K, float(model.hyperparameters["lr"]),
    )
