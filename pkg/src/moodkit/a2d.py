"""Agree-to-Disagree objective.

Modalities should agree on the ground-truth class and disagree on the rest:
the ground-truth entry is dropped from each modality's prediction and the
remaining (un-renormalized) vectors are pushed apart under a distance metric.
Synthesized outliers get the same treatment on full vectors plus an entropy
bonus.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ArgumentError, ShapeError
from .model import (PROB_FLOOR, cross_entropy, entropy, logitnorm_backward, logitnorm_logits,
                    softmax, softmax_backward)

METRICS = {
    "hellinger": kernels.HELLINGER,
    "l1": kernels.L1,
    "l2": kernels.L2,
    "wasserstein1d": kernels.WASSERSTEIN,
}


@dataclass
class A2DConfig:
    gamma: float = 0.5
    metric: str = "hellinger"
    use_npmix: bool = False
    modality_count: int = 2

    def __post_init__(self):
        if self.gamma < 0:
            raise ArgumentError("gamma must be nonnegative")
        if self.metric not in METRICS:
            raise ArgumentError(f"unknown metric {self.metric!r}; expected one of {sorted(METRICS)}")


# ---------------------------------------------------------------------------
# distances between single vectors
# ---------------------------------------------------------------------------

def _pair(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ArgumentError(f"vectors must be 1-D of equal length, got {p.shape} and {q.shape}")
    return p, q


def hellinger(p, q) -> float:
    p, q = _pair(p, q)
    if np.any(p < 0) or np.any(q < 0):
        raise ArgumentError("Hellinger distance needs nonnegative entries")
    return float(np.sqrt(0.5 * np.sum((np.sqrt(p) - np.sqrt(q)) ** 2)))


def lp_distance(p, q, order=1) -> float:
    p, q = _pair(p, q)
    if order == 1:
        return float(np.sum(np.abs(p - q)))
    if order == 2:
        return float(np.sqrt(np.sum((p - q) ** 2)))
    raise ArgumentError("order must be 1 or 2")


def wasserstein1d(p, q) -> float:
    """Earth mover's distance on the unit-spaced ordered support 0..K-1."""
    p, q = _pair(p, q)
    if np.any(p < 0) or np.any(q < 0):
        raise ArgumentError("Wasserstein distance needs nonnegative entries")
    return float(np.sum(np.abs(np.cumsum(p) - np.cumsum(q))))


def distance(p, q, metric="hellinger") -> float:
    if metric == "hellinger":
        return hellinger(p, q)
    if metric == "l1":
        return lp_distance(p, q, 1)
    if metric == "l2":
        return lp_distance(p, q, 2)
    if metric == "wasserstein1d":
        return wasserstein1d(p, q)
    raise ArgumentError(f"unknown metric {metric!r}")


def truncate_prediction(p, label):
    """Drop the ``label`` entry; the remainder is not renormalized."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] < 2:
        raise ArgumentError("truncation needs at least 2 classes")
    if not 0 <= int(label) < p.shape[-1]:
        raise ArgumentError(f"label {label} out of range")
    return np.delete(p, int(label), axis=-1)


def _mean_pairwise(preds, metric):
    M = len(preds)
    if M < 2:
        raise ArgumentError("discrepancy needs at least 2 modalities")
    total = sum(distance(preds[i], preds[j], metric)
                for i in range(M - 1) for j in range(i + 1, M))
    return 2.0 * total / (M * (M - 1))


# ---------------------------------------------------------------------------
# per-sample losses
# ---------------------------------------------------------------------------

def loss_discr(preds, label, metric="hellinger") -> float:
    """Negative mean pairwise distance between ground-truth-truncated predictions."""
    return -_mean_pairwise([truncate_prediction(p, label) for p in preds], metric)


def loss_cls(joint, modality_preds, label) -> float:
    terms = [cross_entropy(joint, label)] + [cross_entropy(p, label) for p in modality_preds]
    return sum(terms) / len(terms)


def loss_discr_syn(syn_preds, metric="hellinger") -> float:
    """Negative mean pairwise distance between full outlier predictions."""
    return -_mean_pairwise(list(syn_preds), metric)


def loss_ent(syn_preds) -> float:
    if len(syn_preds) < 1:
        raise ArgumentError("need at least one prediction")
    return -float(np.mean([entropy(p) for p in syn_preds]))


# ---------------------------------------------------------------------------
# batched objective with gradients w.r.t. logits
# ---------------------------------------------------------------------------

@dataclass
class LossTerms:
    total: float
    l_cls: float
    l_discr: float
    l_discr_syn: float = 0.0
    l_ent: float = 0.0

    def as_dict(self):
        return {"total": self.total, "l_cls": self.l_cls, "l_discr": self.l_discr,
                "l_discr_syn": self.l_discr_syn, "l_ent": self.l_ent}


@dataclass
class LogitGrads:
    joint_logits: np.ndarray
    modality_logits: list
    synth_logits: list = field(default_factory=list)


def _truncate_rows(P, labels):
    n, C = P.shape
    keep = np.ones((n, C), dtype=bool)
    keep[np.arange(n), labels] = False
    return P[keep].reshape(n, C - 1), keep


def _ce_rows(logits, labels, tau):
    """Per-row CE and its gradient w.r.t. the raw logits."""
    u = logits if tau is None else logitnorm_logits(logits, tau)
    p = softmax(u)
    rows = np.arange(logits.shape[0])
    ce = -np.log(np.maximum(p[rows, labels], PROB_FLOOR))
    g = p.copy()
    g[rows, labels] -= 1.0
    if tau is not None:
        g = logitnorm_backward(logits, tau, g)
    return ce, g


def batch_discrepancy(probs_list, metric, labels=None):
    """Per-row mean pairwise distance and its gradient w.r.t. each full prob matrix.

    With ``labels`` the ground-truth column is removed first.
    """
    P = np.stack(probs_list)
    if P.shape[0] < 2:
        raise ArgumentError("discrepancy needs at least 2 modalities")
    if labels is None:
        return kernels.pair_discrepancy(P, METRICS[metric])
    M, n, C = P.shape
    if C < 2:
        raise ArgumentError("truncation needs at least 2 classes")
    keep = np.ones((n, C), dtype=bool)
    keep[np.arange(n), labels] = False
    T = P[:, keep].reshape(M, n, C - 1)
    dist, gT = kernels.pair_discrepancy(T, METRICS[metric])
    grad = np.zeros_like(P)
    grad[:, keep] = gT.reshape(M, -1)
    return dist, grad


def objective(bundle, labels, cfg: A2DConfig, synth=None, logitnorm_tau=None):
    """Batch-mean loss terms and gradients w.r.t. every logit matrix.

    ``bundle`` holds the real batch; ``synth`` (a ``HeadPredictions``) the
    per-modality head outputs on synthesized outliers. Without npmix the loss
    is ``L_cls + gamma * L_discr``; with it ``gamma`` also multiplies the
    outlier discrepancy and entropy terms.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = bundle.n
    M = len(bundle.modality_probs)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got {labels.shape}")
    if cfg.use_npmix and synth is None:
        raise ArgumentError("npmix objective needs synthesized outliers")
    gamma = cfg.gamma

    ce_j, g_j = _ce_rows(bundle.joint_logits, labels, logitnorm_tau)
    ce_sum = ce_j.copy()
    g_mod = []
    for lk in bundle.modality_logits:
        ce_k, g_k = _ce_rows(lk, labels, logitnorm_tau)
        ce_sum += ce_k
        g_mod.append(g_k / (n * (M + 1)))
    g_joint = g_j / (n * (M + 1))
    l_cls = float(np.mean(ce_sum / (M + 1)))

    l_discr = 0.0
    if M >= 2:
        dist, gP = batch_discrepancy(bundle.modality_probs, cfg.metric, labels)
        l_discr = -float(np.mean(dist))
        if gamma != 0:
            for k in range(M):
                g_mod[k] = g_mod[k] + softmax_backward(bundle.modality_probs[k],
                                                       -gamma / n * gP[k])

    l_syn = l_ent = 0.0
    g_syn = []
    if cfg.use_npmix:
        ns = synth.modality_probs[0].shape[0]
        dist_s, gS = batch_discrepancy(synth.modality_probs, cfg.metric)
        l_syn = -float(np.mean(dist_s))
        ents = [entropy(p) for p in synth.modality_probs]
        l_ent = -float(np.mean(np.sum(ents, axis=0) / M))
        for k, p in enumerate(synth.modality_probs):
            # dH/dp = -(log p + 1);  L_ent = -(1/M) H
            dH = -(np.log(np.maximum(p, 1e-300)) + 1.0)
            gp = -gamma / ns * gS[k] - gamma / (ns * M) * dH
            g_syn.append(softmax_backward(p, gp))
        total = l_cls + gamma * (l_discr + l_syn + l_ent)
    else:
        total = l_cls + gamma * l_discr
    return (LossTerms(float(total), l_cls, l_discr, l_syn, l_ent),
            LogitGrads(g_joint, g_mod, g_syn))


def total_loss(bundle, labels, cfg: A2DConfig, synth=None, logitnorm_tau=None) -> float:
    return objective(bundle, labels, cfg, synth, logitnorm_tau)[0].total


def discrepancy_statistic(bundle_or_probs) -> np.ndarray:
    """Per-sample mean pairwise L1 distance between full modality predictions."""
    probs = getattr(bundle_or_probs, "modality_probs", bundle_or_probs)
    if len(probs) < 2:
        raise ArgumentError("discrepancy needs at least 2 modalities")
    return kernels.pair_discrepancy(np.stack(probs), kernels.L1)[0]
