"""Shared data model: feature matrices, labeled multimodal batches, RNG."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ArgumentError, ShapeError

SPLITS = ("id_train", "id_val", "id_test", "ood_test")
OOD_LABEL = -1


def as_feature_matrix(x, name="features") -> np.ndarray:
    """Return ``x`` as a finite 2-D float64 array, raising on violations."""
    arr = np.array(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must have at least one row and one column, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ArgumentError(f"{name} contains non-finite values")
    return arr


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic generator: numpy PCG64 seeded through SeedSequence."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def derive_seed(seed: int, offset: int) -> int:
    """Child seed for an independent stream ``offset`` of a master ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(offset),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class LabeledBatch:
    """Row-aligned multimodal samples with labels and split tags.

    OOD rows carry label ``-1``. Arrays are copied and write-protected on
    construction.
    """

    modalities: tuple
    labels: np.ndarray
    splits: np.ndarray
    num_classes: int = field(default=0)

    def __post_init__(self):
        mods = tuple(as_feature_matrix(m, f"modality {k}") for k, m in enumerate(self.modalities))
        if not mods:
            raise ShapeError("a batch needs at least one modality")
        n = mods[0].shape[0]
        for k, m in enumerate(mods):
            if m.shape[0] != n:
                raise ShapeError(f"modality {k} has {m.shape[0]} rows, expected {n}")
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        splits = np.array(self.splits, dtype=object).reshape(-1)
        if labels.shape[0] != n or splits.shape[0] != n:
            raise ShapeError(f"labels ({labels.shape[0]}) and splits ({splits.shape[0]}) "
                             f"must both have {n} rows")
        bad = [s for s in set(splits.tolist()) if s not in SPLITS]
        if bad:
            raise ArgumentError(f"unknown split tag(s): {sorted(map(str, bad))}")
        is_ood = splits == "ood_test"
        if np.any(labels[is_ood] != OOD_LABEL):
            raise ArgumentError("ood_test rows must carry label -1")
        num_classes = int(self.num_classes)
        id_labels = labels[~is_ood]
        if num_classes <= 0:
            num_classes = int(id_labels.max()) + 1 if id_labels.size else 0
        if id_labels.size and (id_labels.min() < 0 or id_labels.max() >= num_classes):
            raise ArgumentError(f"ID labels must lie in [0, {num_classes})")
        for m in mods:
            m.setflags(write=False)
        labels.setflags(write=False)
        splits.setflags(write=False)
        object.__setattr__(self, "modalities", mods)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "splits", splits)
        object.__setattr__(self, "num_classes", num_classes)

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def dims(self) -> list[int]:
        return [m.shape[1] for m in self.modalities]

    def __len__(self):
        return self.n

    def subset(self, rows) -> "LabeledBatch":
        rows = np.asarray(rows)
        return LabeledBatch(tuple(m[rows] for m in self.modalities), self.labels[rows],
                            self.splits[rows], self.num_classes)

    def split(self, name: str) -> "LabeledBatch":
        """Rows tagged ``name``. Raises if there are none."""
        if name not in SPLITS:
            raise ArgumentError(f"unknown split {name!r}")
        rows = np.flatnonzero(self.splits == name)
        if rows.size == 0:
            raise ArgumentError(f"split {name!r} is empty")
        return self.subset(rows)

    def count(self, name: str) -> int:
        return int(np.count_nonzero(self.splits == name))


def concat_modalities(batch_or_mats) -> np.ndarray:
    """Column-wise concatenation ``[Z^1 | ... | Z^M]``, rows preserved."""
    mats = batch_or_mats.modalities if isinstance(batch_or_mats, LabeledBatch) else batch_or_mats
    mats = [np.asarray(m, dtype=np.float64) for m in mats]
    if not mats:
        raise ShapeError("nothing to concatenate")
    n = mats[0].shape[0]
    for k, m in enumerate(mats):
        if m.ndim != 2 or m.shape[0] != n:
            raise ShapeError(f"modality {k} has shape {m.shape}, expected {n} rows")
    return np.concatenate(mats, axis=1)


def split_modalities(joint, dims: Sequence[int]) -> list[np.ndarray]:
    """Inverse of :func:`concat_modalities` for per-modality widths ``dims``."""
    joint = np.asarray(joint, dtype=np.float64)
    dims = [int(d) for d in dims]
    if joint.ndim != 2 or sum(dims) != joint.shape[1] or any(d < 1 for d in dims):
        raise ShapeError(f"dims {dims} do not partition {joint.shape[-1]} columns")
    edges = np.cumsum(dims)[:-1]
    return [part.copy() for part in np.split(joint, edges, axis=1)]
