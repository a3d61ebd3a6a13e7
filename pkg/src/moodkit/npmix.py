"""Outlier synthesis in the combined embedding space.

NP-Mix mixes a sample of class ``c`` with a sample of one of ``c``'s nearest
prototype classes, so outliers land between neighbouring class clusters. The
plain mixup baseline mixes arbitrary sample pairs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError


@dataclass
class PrototypeSet:
    prototypes: np.ndarray  # (C, D)
    counts: np.ndarray  # (C,)

    @property
    def num_classes(self):
        return self.prototypes.shape[0]


@dataclass
class NpMixConfig:
    neighbors_n: int = 2
    alpha: float = 10.0
    outliers_per_batch: int | None = None  # None: same as the batch size

    def __post_init__(self):
        if self.neighbors_n < 1:
            raise ArgumentError("neighbors_n must be positive")
        if self.alpha <= 0:
            raise ArgumentError("alpha must be positive")
        if self.outliers_per_batch is not None and self.outliers_per_batch < 1:
            raise ArgumentError("outliers_per_batch must be positive")


@dataclass
class SynthesizedBatch:
    """Mixed embeddings with provenance.

    Row ``r`` equals ``lam[r] * Z_1 + (1 - lam[r]) * Z_2`` where ``Z_1`` is row
    ``index_a[r]`` of the pool named by ``pool_a[r]`` (0 = batch, 1 = epoch pool)
    and likewise for ``Z_2``.
    """
    joint_embeddings: np.ndarray
    class_a: np.ndarray
    class_b: np.ndarray
    index_a: np.ndarray
    index_b: np.ndarray
    pool_a: np.ndarray
    pool_b: np.ndarray
    lam: np.ndarray

    def __len__(self):
        return self.joint_embeddings.shape[0]

    def reconstruct(self, batch_embeddings, pool_embeddings=None) -> np.ndarray:
        """Recompute every row from its recorded sources."""
        pools = [np.asarray(batch_embeddings),
                 np.asarray(pool_embeddings if pool_embeddings is not None else batch_embeddings)]
        za = np.stack([pools[p][i] for p, i in zip(self.pool_a, self.index_a)])
        zb = np.stack([pools[p][i] for p, i in zip(self.pool_b, self.index_b)])
        lam = self.lam[:, None]
        return lam * za + (1.0 - lam) * zb


def compute_prototypes(embeddings, labels, num_classes=None) -> PrototypeSet:
    """Per-class mean of the combined embeddings."""
    Z = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    C = int(num_classes) if num_classes is not None else int(labels.max()) + 1
    counts = np.bincount(labels, minlength=C)[:C]
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ArgumentError(f"class {int(empty[0])} has no samples")
    sums = np.zeros((C, Z.shape[1]))
    np.add.at(sums, labels, Z)
    return PrototypeSet(sums / counts[:, None], counts)


def nearest_prototype_classes(protos: PrototypeSet, c: int, n: int) -> list[int]:
    """The ``n`` classes closest to ``c`` (Euclidean), ties to the lower index."""
    C = protos.num_classes
    if not 1 <= n <= C - 1:
        raise ArgumentError(f"n must be in [1, {C - 1}], got {n}")
    d = np.linalg.norm(protos.prototypes - protos.prototypes[c], axis=1)
    order = [s for s in np.argsort(d, kind="stable") if s != c]
    return [int(s) for s in order[:n]]


def neighbor_table(protos: PrototypeSet, n: int) -> np.ndarray:
    return np.array([nearest_prototype_classes(protos, c, n) for c in range(protos.num_classes)])


def npmix_synthesize(embeddings, labels, protos: PrototypeSet, cfg: NpMixConfig, rng,
                     pool_embeddings=None, pool_labels=None, count=None,
                     lam=None) -> SynthesizedBatch:
    """Draw outliers between each sampled class and a random nearest neighbour class.

    Samples come from the current batch; a neighbour class missing from the
    batch is drawn from the epoch pool instead. ``lam`` fixes the mixing
    coefficient (testing hook); otherwise it is drawn from Beta(alpha, alpha).
    """
    Z = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    C = protos.num_classes
    if C < 2:
        raise ArgumentError("NP-Mix needs at least 2 classes")
    if cfg.neighbors_n > C - 1:
        raise ArgumentError(f"neighbors_n={cfg.neighbors_n} exceeds C-1={C - 1}")
    if pool_embeddings is None:
        pool_embeddings, pool_labels = Z, labels
    pool_labels = np.asarray(pool_labels, dtype=np.int64)
    if count is None:
        count = cfg.outliers_per_batch or Z.shape[0]

    table = neighbor_table(protos, cfg.neighbors_n)
    by_class = [np.flatnonzero(labels == c) for c in range(C)]
    pool_by_class = [np.flatnonzero(pool_labels == c) for c in range(C)]
    present = np.array([c for c in range(C) if by_class[c].size])
    if present.size == 0:
        raise ArgumentError("batch has no labelled samples")

    def pick(c):
        if by_class[c].size:
            return 0, int(by_class[c][rng.integers(by_class[c].size)])
        if pool_by_class[c].size == 0:
            raise ArgumentError(f"class {c} is absent from both batch and pool")
        return 1, int(pool_by_class[c][rng.integers(pool_by_class[c].size)])

    pools = (Z, np.asarray(pool_embeddings, dtype=np.float64))
    ca, cb = np.empty(count, np.int64), np.empty(count, np.int64)
    ia, ib = np.empty(count, np.int64), np.empty(count, np.int64)
    pa, pb = np.empty(count, np.int64), np.empty(count, np.int64)
    for r in range(count):
        c = int(present[rng.integers(present.size)])
        s = int(table[c][rng.integers(cfg.neighbors_n)])
        ca[r], cb[r] = c, s
        pa[r], ia[r] = pick(c)
        pb[r], ib[r] = pick(s)
    lams = rng.beta(cfg.alpha, cfg.alpha, size=count) if lam is None else np.full(count, float(lam))
    za = np.stack([pools[p][i] for p, i in zip(pa, ia)])
    zb = np.stack([pools[p][i] for p, i in zip(pb, ib)])
    out = lams[:, None] * za + (1.0 - lams[:, None]) * zb
    return SynthesizedBatch(out, ca, cb, ia, ib, pa, pb, lams)


def mixup_synthesize(embeddings, labels, alpha, rng, count=None, lam=None) -> SynthesizedBatch:
    """Mix uniformly drawn sample pairs regardless of class."""
    Z = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = Z.shape[0]
    if n < 2:
        raise ArgumentError("mixup needs at least 2 samples")
    if alpha <= 0:
        raise ArgumentError("alpha must be positive")
    count = n if count is None else int(count)
    ia = rng.integers(n, size=count)
    # second index drawn from the other n-1 samples
    ib = rng.integers(n - 1, size=count)
    ib = ib + (ib >= ia)
    lams = rng.beta(alpha, alpha, size=count) if lam is None else np.full(count, float(lam))
    out = lams[:, None] * Z[ia] + (1.0 - lams[:, None]) * Z[ib]
    zeros = np.zeros(count, np.int64)
    return SynthesizedBatch(out, labels[ia], labels[ib], ia, ib, zeros, zeros.copy(), lams)
