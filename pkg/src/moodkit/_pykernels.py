"""Pure-numpy reference implementation of the hot kernels.

Kept semantically identical to ``_ckernels.pyx``; the test-suite runs both
and compares them.
"""
import numpy as np

HELLINGER, L1, L2, WASSERSTEIN = 0, 1, 2, 3


def _pair(p, q, metric):
    """Distance per row and its gradients w.r.t. ``p`` and ``q``."""
    if metric == HELLINGER:
        sp, sq = np.sqrt(p), np.sqrt(q)
        diff = sp - sq
        d = np.sqrt(0.5 * np.sum(diff * diff, axis=1))
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(d > 0, 0.25 / np.where(d > 0, d, 1.0), 0.0)[:, None]
            gp = np.where(sp > 0, coef * diff / np.where(sp > 0, sp, 1.0), 0.0)
            gq = np.where(sq > 0, -coef * diff / np.where(sq > 0, sq, 1.0), 0.0)
        return d, gp, gq
    if metric == L1:
        diff = p - q
        s = np.sign(diff)
        return np.sum(np.abs(diff), axis=1), s, -s
    if metric == L2:
        diff = p - q
        d = np.sqrt(np.sum(diff * diff, axis=1))
        inv = np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), 0.0)[:, None]
        return d, diff * inv, -diff * inv
    if metric == WASSERSTEIN:
        cdiff = np.cumsum(p, axis=1) - np.cumsum(q, axis=1)
        s = np.sign(cdiff)
        # d/dp_j sum_i |P_i - Q_i| = sum_{i >= j} sign(P_i - Q_i)
        g = np.cumsum(s[:, ::-1], axis=1)[:, ::-1]
        return np.sum(np.abs(cdiff), axis=1), g, -g
    raise ValueError(f"unknown metric code {metric}")


def pair_discrepancy(P, metric):
    """Mean pairwise distance across modalities, per row, with gradient.

    Parameters
    ----------
    P : ndarray, shape (M, n, K)
        Per-modality prediction rows.
    metric : int
        One of HELLINGER, L1, L2, WASSERSTEIN.

    Returns
    -------
    dist : ndarray (n,)
        ``2/(M(M-1)) * sum_{i<j} D(P[i], P[j])``.
    grad : ndarray (M, n, K)
        Gradient of ``dist`` w.r.t. ``P``.
    """
    P = np.ascontiguousarray(P, dtype=np.float64)
    M, n, K = P.shape
    w = 2.0 / (M * (M - 1))
    dist = np.zeros(n)
    grad = np.zeros_like(P)
    for i in range(M - 1):
        for j in range(i + 1, M):
            d, gp, gq = _pair(P[i], P[j], metric)
            dist += w * d
            grad[i] += w * gp
            grad[j] += w * gq
    return dist, grad


def auroc_sorted(id_sorted, ood_sorted):
    """Tie-aware Mann-Whitney AUROC from two ascending-sorted score arrays."""
    id_sorted = np.asarray(id_sorted, dtype=np.float64)
    ood_sorted = np.asarray(ood_sorted, dtype=np.float64)
    n, m = id_sorted.size, ood_sorted.size
    right = np.searchsorted(id_sorted, ood_sorted, side="right")
    left = np.searchsorted(id_sorted, ood_sorted, side="left")
    greater = int(np.sum(n - right))
    ties = int(np.sum(right - left))
    return (2 * greater + ties) / (2.0 * n * m)
