"""L2-regularised hinge-loss linear SVM with an unregularised bias.

Solves  min_{w,b} 1/2 ||w||^2 + C * sum_i max(0, 1 - y_i (w.x_i + b))

through its dual (box constraints plus y'a = 0, which is what leaves the bias
unregularised) with SMO on the Gram matrix. The KKT tolerance is tightened
until the duality gap certifies the requested relative accuracy; the bias is
then re-optimised exactly for the final w.
"""
from dataclasses import dataclass

import numpy as np

from .kernels import smo_solve


@dataclass
class SolverReport:
    objective: float
    slacks: np.ndarray
    iterations: int


def hinge_objective(w, b, X, y, C):
    """Primal objective and per-example slacks."""
    slacks = np.maximum(0.0, 1.0 - y * (X @ w + b))
    return 0.5 * float(w @ w) + C * float(slacks.sum()), slacks


def best_bias(scores, y):
    """Bias minimising sum_i max(0, 1 - y_i (scores_i + b)); exact.

    The loss is convex and piecewise linear in b, so a minimiser sits at one
    of the breakpoints, all of which are evaluated with prefix sums.
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos = y > 0
    T = np.sort(1.0 - scores[pos])      # positive hinge active while b < T
    U = np.sort(-1.0 - scores[~pos])    # negative hinge active while b > U
    cand = np.concatenate([T, U])
    cT = np.concatenate([[0.0], np.cumsum(T)])
    cU = np.concatenate([[0.0], np.cumsum(U)])
    iT = np.searchsorted(T, cand, side="right")
    iU = np.searchsorted(U, cand, side="left")
    F = (cT[-1] - cT[iT]) - cand * (T.size - iT) + cand * iU - cU[iU]
    # prefix sums round; settle near-ties by direct evaluation
    near = np.nonzero(F <= F.min() + 1e-9 * (1.0 + abs(F.min())))[0][:16]
    best_b, best_f = 0.0, np.inf
    for b in cand[near]:
        f = float(np.maximum(0.0, 1.0 - y * (scores + b)).sum())
        if f < best_f:
            best_b, best_f = float(b), f
    return best_b


def train_linear_svm(pos_feats, neg_feats, C, tol=1e-7, init=None, max_iter=10_000_000):
    """Fit (w, b) to positives vs negatives; returns (w, b, SolverReport).

    The returned objective is within ``tol`` (relative) of the optimum. When
    ``init=(w0, b0)`` is given the result is never worse than that point.
    """
    pos = np.atleast_2d(np.asarray(pos_feats, dtype=np.float64))
    neg = np.atleast_2d(np.asarray(neg_feats, dtype=np.float64))
    if pos.shape[0] == 0 or pos.size == 0:
        raise ValueError("train_linear_svm needs at least one positive")
    if neg.shape[0] == 0 or neg.size == 0:
        raise ValueError("train_linear_svm needs at least one negative")
    if pos.shape[1] != neg.shape[1]:
        raise ValueError(f"dimension mismatch: {pos.shape[1]} vs {neg.shape[1]}")
    if not C > 0:
        raise ValueError("C must be positive")
    if not tol > 0:
        raise ValueError("tol must be positive")
    X = np.ascontiguousarray(np.vstack([pos, neg]))
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite features")
    y = np.concatenate([np.ones(pos.shape[0]), -np.ones(neg.shape[0])])

    K = X @ X.T
    alpha = np.zeros(X.shape[0])
    G = -np.ones(X.shape[0])
    eps, steps = 1e-2, 0
    while True:
        n, _ = smo_solve(K, y, C, alpha, G, eps, max_iter - steps)
        steps += n
        w = X.T @ (alpha * y)
        b = best_bias(X @ w, y)
        primal, _ = hinge_objective(w, b, X, y, C)
        dual = float(alpha.sum()) - 0.5 * float(w @ w)
        if primal - dual <= tol * max(abs(primal), 1e-300) or eps < 1e-14 or steps >= max_iter:
            break
        eps *= 0.1
        # restart from exact gradients so round-off cannot stall the pairs
        G = y * (K @ (alpha * y)) - 1.0

    if init is not None:
        w0 = np.asarray(init[0], dtype=np.float64)
        b0 = float(init[1])
        if w0.shape == w.shape:
            p0, _ = hinge_objective(w0, b0, X, y, C)
            if p0 < primal:
                w, b = w0.copy(), b0
    objective, slacks = hinge_objective(w, b, X, y, C)
    return w, b, SolverReport(objective, slacks, steps)
