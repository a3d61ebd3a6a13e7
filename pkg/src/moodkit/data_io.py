"""Synthetic multimodal data and the manifest + CSV dataset format.

On-disk layout (all UTF-8, ``\\n`` line endings)::

    manifest.json      format, version, counts, file list with sha256
    modality_<k>.csv   header f0,f1,...; one sample per row, %.17g floats
    labels.csv         sample_id,label   (OOD rows: -1)
    splits.csv         sample_id,split   (id_train | id_val | id_test | ood_test)

Row ``i`` of every file describes sample ``i``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (AlignmentError, ArgumentError, ChecksumError, ConfigError, DataError,
                     NonFiniteValueError, SplitTagError)
from .types import OOD_LABEL, SPLITS, LabeledBatch, derive_seed, seeded_rng, split_modalities

MANIFEST_FORMAT = "moodkit-manifest"
MANIFEST_VERSION = 1
SPLIT_FRACTIONS = (0.7, 0.1, 0.2)


@dataclass
class SynthConfig:
    id_classes: int = 10
    near_ood_classes: int = 10
    dims: list = field(default_factory=lambda: [16, 16])
    samples_per_class: int = 200
    class_sep: float = 3.0
    modality_corr: float = 0.8
    far_ood_shift: float = 5.0
    noise_sigma: float = 1.0
    latent_dim: int = 16
    ood_variant: str = "near"
    seed: int = 7

    def __post_init__(self):
        self.dims = [int(d) for d in self.dims]
        problems = []
        if self.id_classes < 2:
            problems.append("id_classes must be >= 2")
        if self.near_ood_classes < 1 or self.samples_per_class < 1 or self.latent_dim < 1:
            problems.append("counts must be >= 1")
        if not self.dims or any(d < 1 for d in self.dims):
            problems.append("dims must be a nonempty list of positive widths")
        if not 0.0 <= self.modality_corr <= 1.0:
            problems.append("modality_corr must lie in [0, 1]")
        if self.noise_sigma < 0 or self.class_sep < 0:
            problems.append("noise_sigma and class_sep must be nonnegative")
        if self.ood_variant not in ("near", "far"):
            problems.append("ood_variant must be 'near' or 'far'")
        if problems:
            raise ConfigError("; ".join(problems))


def _class_means(rng, cfg, mixing, n_classes):
    """Per-modality class means from a shared latent plus modality-private noise.

    ``corr * A_k m_c + (1 - corr) * own`` is rescaled to per-coordinate variance
    ``2 class_sep^2 / d_k``: two class means then lie ``2 * class_sep`` apart in
    expectation, whatever the width.
    """
    latent = rng.normal(size=(n_classes, cfg.latent_dim))
    corr = cfg.modality_corr
    unit = math.sqrt(corr ** 2 + (1.0 - corr) ** 2)
    means = []
    for A in mixing:
        d = A.shape[0]
        own = rng.normal(size=(n_classes, d))
        shared = latent @ A.T
        scale = cfg.class_sep * math.sqrt(2.0 / d) / unit
        means.append(scale * (corr * shared + (1.0 - corr) * own))
    return means


def _samples(rng, means, cfg, shift=0.0):
    out = []
    n = cfg.samples_per_class
    for mu in means:
        C, d = mu.shape
        noise = rng.normal(size=(C, n, d)) * cfg.noise_sigma
        out.append((mu[:, None, :] + shift + noise).reshape(C * n, d))
    return out


def generate_synthetic(cfg: SynthConfig | None = None) -> LabeledBatch:
    """ID classes split 70/10/20 into train/val/test, held-out classes as OOD test.

    Near-OOD classes come from the same generator as ID classes. The far
    variant redraws OOD class means from an independent stream and shifts every
    OOD coordinate by ``far_ood_shift``.
    """
    cfg = cfg or SynthConfig()
    rng = seeded_rng(cfg.seed)
    mixing = [rng.normal(size=(d, cfg.latent_dim)) / math.sqrt(cfg.latent_dim) for d in cfg.dims]
    total = cfg.id_classes + cfg.near_ood_classes
    means = _class_means(rng, cfg, mixing, total)
    id_means = [m[:cfg.id_classes] for m in means]
    id_x = _samples(rng, id_means, cfg)

    if cfg.ood_variant == "near":
        ood_means = [m[cfg.id_classes:] for m in means]
        ood_x = _samples(rng, ood_means, cfg)
    else:
        far_rng = seeded_rng(derive_seed(cfg.seed, 1))
        far_mixing = [far_rng.normal(size=(d, cfg.latent_dim)) / math.sqrt(cfg.latent_dim)
                      for d in cfg.dims]
        ood_means = _class_means(far_rng, cfg, far_mixing, cfg.near_ood_classes)
        ood_x = _samples(far_rng, ood_means, cfg, shift=cfg.far_ood_shift)

    n = cfg.samples_per_class
    id_labels = np.repeat(np.arange(cfg.id_classes), n)
    n_train = int(round(SPLIT_FRACTIONS[0] * n))
    n_val = int(round(SPLIT_FRACTIONS[1] * n))
    id_splits = np.empty(id_labels.size, dtype=object)
    for c in range(cfg.id_classes):
        perm = rng.permutation(n) + c * n
        id_splits[perm[:n_train]] = "id_train"
        id_splits[perm[n_train:n_train + n_val]] = "id_val"
        id_splits[perm[n_train + n_val:]] = "id_test"
    n_ood = cfg.near_ood_classes * n
    mods = [np.concatenate([a, b]) for a, b in zip(id_x, ood_x)]
    labels = np.concatenate([id_labels, np.full(n_ood, OOD_LABEL)])
    splits = np.concatenate([id_splits, np.array(["ood_test"] * n_ood, dtype=object)])
    return LabeledBatch(tuple(mods), labels, splits, cfg.id_classes)


# ---------------------------------------------------------------------------
# CSV + manifest
# ---------------------------------------------------------------------------

def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def feature_csv(matrix) -> str:
    matrix = np.asarray(matrix, dtype=np.float64)
    buf = io.StringIO()
    buf.write(",".join(f"f{j}" for j in range(matrix.shape[1])) + "\n")
    for row in matrix:
        buf.write(",".join("%.17g" % v for v in row) + "\n")
    return buf.getvalue()


@dataclass
class DatasetManifest:
    version: int
    num_samples: int
    num_classes: int
    modalities: list  # [{"path", "dim", "sha256"}]
    labels: dict
    splits: dict
    split_counts: dict

    def to_dict(self):
        return {"format": MANIFEST_FORMAT, **asdict(self)}


def export_manifest(batch: LabeledBatch, out_dir) -> DatasetManifest:
    """Write ``batch`` as CSV files plus ``manifest.json`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mods = []
    for k, m in enumerate(batch.modalities):
        name = f"modality_{k}.csv"
        _write_text(out / name, feature_csv(m))
        mods.append({"path": name, "dim": int(m.shape[1]), "sha256": _sha256(out / name)})
    ids = range(batch.n)
    _write_text(out / "labels.csv", "sample_id,label\n"
                + "".join(f"{i},{int(l)}\n" for i, l in zip(ids, batch.labels)))
    _write_text(out / "splits.csv", "sample_id,split\n"
                + "".join(f"{i},{s}\n" for i, s in zip(ids, batch.splits)))
    manifest = DatasetManifest(
        version=MANIFEST_VERSION,
        num_samples=batch.n,
        num_classes=batch.num_classes,
        modalities=mods,
        labels={"path": "labels.csv", "sha256": _sha256(out / "labels.csv")},
        splits={"path": "splits.csv", "sha256": _sha256(out / "splits.csv")},
        split_counts={s: batch.count(s) for s in SPLITS},
    )
    _write_text(out / "manifest.json", json.dumps(manifest.to_dict(), indent=2) + "\n")
    return manifest


def _rows(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.reader(fh))


def _checked(base, entry):
    path = base / entry["path"]
    if not path.is_file():
        raise FileNotFoundError(f"manifest references missing file {path}")
    if _sha256(path) != entry["sha256"]:
        raise ChecksumError("sha256 does not match manifest", path)
    return path


def _read_features(path, dim):
    rows = _rows(path)
    expected = [f"f{j}" for j in range(dim)]
    if not rows or rows[0] != expected:
        raise DataError(f"header must be {','.join(expected[:3])}... ({dim} columns)", path, 1)
    out = np.empty((len(rows) - 1, dim))
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != dim:
            raise DataError(f"expected {dim} values, found {len(row)}", path, line)
        try:
            vals = [float(v) for v in row]
        except ValueError as exc:
            raise NonFiniteValueError(f"unparsable number ({exc})", path, line) from None
        if not all(math.isfinite(v) for v in vals):
            raise NonFiniteValueError("non-finite value", path, line)
        out[i] = vals
    return out


def _read_column(path, header, expected_rows, convert):
    rows = _rows(path)
    if not rows or rows[0] != list(header):
        raise DataError(f"header must be {','.join(header)}", path, 1)
    body = rows[1:]
    if len(body) != expected_rows:
        raise AlignmentError(f"{len(body)} rows, expected {expected_rows}", path)
    out = []
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != 2:
            raise DataError("expected 2 columns", path, line)
        if row[0] != str(i):
            raise AlignmentError(f"sample_id {row[0]!r} out of order, expected {i}", path, line)
        out.append(convert(row[1], path, line))
    return out


def _label(value, path, line):
    try:
        return int(value)
    except ValueError:
        raise DataError(f"bad label {value!r}", path, line) from None


def _split(value, path, line):
    if value not in SPLITS:
        raise SplitTagError(f"unknown split tag {value!r}", path, line)
    return value


def load_manifest(path) -> LabeledBatch:
    """Read and validate a dataset written by :func:`export_manifest`."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest is not valid JSON ({exc})", path) from None
    if doc.get("format") != MANIFEST_FORMAT or doc.get("version") != MANIFEST_VERSION:
        raise DataError("unsupported manifest format/version", path)
    base = path.parent
    n = int(doc["num_samples"])
    mats = []
    for entry in doc["modalities"]:
        fpath = _checked(base, entry)
        m = _read_features(fpath, int(entry["dim"]))
        if m.shape[0] != n:
            raise AlignmentError(f"{m.shape[0]} rows, manifest says {n}", fpath)
        mats.append(m)
    labels = _read_column(_checked(base, doc["labels"]), ("sample_id", "label"), n, _label)
    splits = _read_column(_checked(base, doc["splits"]), ("sample_id", "split"), n, _split)
    try:
        return LabeledBatch(tuple(mats), np.array(labels), np.array(splits, dtype=object),
                            int(doc.get("num_classes", 0)))
    except ArgumentError as exc:
        raise DataError(str(exc), path) from None


def export_synthesized(synth, embed_dims, out_dir) -> list[Path]:
    """Dump synthesized outliers as per-modality feature CSVs plus provenance."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for k, part in enumerate(split_modalities(synth.joint_embeddings, embed_dims)):
        p = out / f"synth_modality_{k}.csv"
        _write_text(p, feature_csv(part))
        written.append(p)
    lines = ["sample_id,class_a,class_b,pool_a,index_a,pool_b,index_b,lambda"]
    for r in range(len(synth)):
        lines.append(f"{r},{synth.class_a[r]},{synth.class_b[r]},{synth.pool_a[r]},"
                     f"{synth.index_a[r]},{synth.pool_b[r]},{synth.index_b[r]},"
                     f"{'%.17g' % synth.lam[r]}")
    p = out / "synth_provenance.csv"
    _write_text(p, "\n".join(lines) + "\n")
    written.append(p)
    return written
