"""Training loop and the baseline / A2D / A2D+NP-Mix comparison."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import scores as scoring
from .a2d import A2DConfig, discrepancy_statistic
from .errors import ArgumentError, NumericalError
from .metrics import EvalReport, auroc, fpr_at_tpr, id_accuracy
from .model import AdamState, adam_step, backward, forward, init_model
from .npmix import NpMixConfig, compute_prototypes, npmix_synthesize
from .types import LabeledBatch, concat_modalities, derive_seed, seeded_rng

# stream offsets under the master seed
INIT_STREAM, SHUFFLE_STREAM, SYNTH_STREAM = 0, 1, 2


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lr: float = 1e-4
    a2d: A2DConfig = field(default_factory=A2DConfig)
    npmix: NpMixConfig | None = None
    logitnorm_tau: float | None = None
    seed: int = 0
    hidden_dim: int = 64
    embed_dim: int = 32
    selection_metric: str = "val_id_acc"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ArgumentError("epochs must be >= 0 and batch_size >= 1")
        if self.lr <= 0:
            raise ArgumentError("lr must be positive")
        if self.logitnorm_tau is not None and self.logitnorm_tau <= 0:
            raise ArgumentError("logitnorm tau must be positive")
        if self.selection_metric != "val_id_acc":
            raise ArgumentError("selection_metric must be 'val_id_acc'")
        if self.a2d.use_npmix and self.npmix is None:
            self.npmix = NpMixConfig()

    @property
    def outliers_per_batch(self):
        if self.npmix is None:
            return 0
        return self.npmix.outliers_per_batch or self.batch_size


@dataclass
class TrainLog:
    entries: list = field(default_factory=list)
    best_epoch: int | None = None

    LOGGED = ("epoch", "total", "l_cls", "l_discr", "l_discr_syn", "l_ent", "val_id_acc",
              "synth_per_batch")

    def to_jsonl(self) -> str:
        """One JSON object per epoch; wall time is left out so reruns are byte-identical."""
        return "".join(json.dumps({k: e[k] for k in self.LOGGED}) + "\n" for e in self.entries)


def train(batch: LabeledBatch, cfg: TrainConfig, progress=None):
    """Train on ``id_train``, select the epoch with the best ``id_val`` accuracy.

    Returns ``(model, log)``. Ties in validation accuracy keep the earlier epoch.
    """
    train_set = batch.split("id_train")
    val_set = batch.split("id_val")
    C = batch.num_classes
    model = init_model(batch.dims, C, seeded_rng(derive_seed(cfg.seed, INIT_STREAM)),
                       cfg.hidden_dim, cfg.embed_dim)
    log = TrainLog()
    if cfg.epochs == 0:
        return model, log

    shuffle_rng = seeded_rng(derive_seed(cfg.seed, SHUFFLE_STREAM))
    synth_rng = seeded_rng(derive_seed(cfg.seed, SYNTH_STREAM))
    a2d = cfg.a2d
    use_npmix = a2d.use_npmix
    n_syn = cfg.outliers_per_batch
    opt = AdamState()
    labels_all = train_set.labels
    n = train_set.n
    best_acc, best_model = -1.0, model.copy()

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        if use_npmix:
            pool = concat_modalities(forward(model, train_set).embeddings)
            protos = compute_prototypes(pool, labels_all, C)
        perm = shuffle_rng.permutation(n)
        sums = np.zeros(5)
        n_batches = 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            rows = perm[start:start + cfg.batch_size]
            xb = [m[rows] for m in train_set.modalities]
            yb = labels_all[rows]
            bundle = forward(model, xb)
            synth = None
            if use_npmix:
                synth = npmix_synthesize(bundle.joint_embedding, yb, protos, cfg.npmix, synth_rng,
                                         pool, labels_all, count=n_syn)
            terms, grads = backward(model, xb, yb, a2d, synth, cfg.logitnorm_tau, bundle=bundle,
                                    synth_pool=pool if use_npmix else None)
            if not np.isfinite(terms.total):
                raise NumericalError(f"non-finite loss at epoch {epoch} batch {b}")
            adam_step(model, grads, opt, cfg.lr)
            sums += [terms.total, terms.l_cls, terms.l_discr, terms.l_discr_syn, terms.l_ent]
            n_batches += 1
        mean = sums / n_batches
        val_acc = id_accuracy(forward(model, val_set).joint_probs, val_set.labels)
        entry = {"epoch": epoch, "total": float(mean[0]), "l_cls": float(mean[1]),
                 "l_discr": float(mean[2]), "l_discr_syn": float(mean[3]),
                 "l_ent": float(mean[4]), "val_id_acc": val_acc,
                 "synth_per_batch": n_syn, "wall_time": time.perf_counter() - t0}
        log.entries.append(entry)
        if progress is not None:
            progress(entry)
        if val_acc > best_acc:
            best_acc, best_model, log.best_epoch = val_acc, model.copy(), epoch
    return best_model, log


# ---------------------------------------------------------------------------
# evaluation over many scorers
# ---------------------------------------------------------------------------

def evaluate_scorers(model, batch: LabeledBatch, kinds=scoring.KINDS, scorer_config=None,
                     overrides=None, executor=None):
    """Fit each scorer on id_train and report on id_test vs ood_test.

    Returns ``(reports, scores)`` where ``scores[kind] = (id_scores, ood_scores)``.
    """
    train_set = batch.split("id_train")
    id_test = batch.split("id_test")
    ood_test = batch.split("ood_test")
    b_train, b_id, b_ood = forward(model, train_set), forward(model, id_test), forward(model, ood_test)
    acc = id_accuracy(b_id.joint_probs, id_test.labels)
    l_id = float(np.mean(discrepancy_statistic(b_id)))
    l_ood = float(np.mean(discrepancy_statistic(b_ood)))
    base = scorer_config or scoring.ScorerConfig()
    overrides = overrides or {}

    def one(kind):
        cfg = base.with_overrides(overrides.get(kind))
        state = scoring.fit(kind, b_train, train_set.labels, model, cfg)
        s_id = scoring.score_batch(state, b_id, model)
        s_ood = scoring.score_batch(state, b_ood, model)
        rep = EvalReport(kind, fpr_at_tpr(s_id, s_ood), auroc(s_id, s_ood), acc, l_id, l_ood,
                         id_test.n, ood_test.n)
        return kind, rep, (s_id, s_ood)

    results = list(executor.map(one, kinds)) if executor is not None else [one(k) for k in kinds]
    return ({k: r for k, r, _ in results}, {k: s for k, _, s in results})


BLOCKS = ("baseline", "a2d", "a2d_npmix")
BLOCK_TITLES = {
    "baseline": "Without A2D Training",
    "a2d": "With A2D Training",
    "a2d_npmix": "With A2D Training and NP-Mix Outlier Synthesis",
}


@dataclass
class ComparisonRecord:
    reports: dict  # block -> kind -> EvalReport
    logs: dict  # block -> TrainLog

    def discrepancy(self, block):
        any_rep = next(iter(self.reports[block].values()))
        return any_rep.l_id, any_rep.l_ood, any_rep.l_ood - any_rep.l_id


def block_configs(base: TrainConfig) -> dict:
    gamma = base.a2d.gamma if base.a2d.gamma > 0 else 0.5
    return {
        "baseline": replace(base, a2d=replace(base.a2d, gamma=0.0, use_npmix=False), npmix=None),
        "a2d": replace(base, a2d=replace(base.a2d, gamma=gamma, use_npmix=False), npmix=None),
        "a2d_npmix": replace(base, a2d=replace(base.a2d, gamma=gamma, use_npmix=True),
                             npmix=base.npmix or NpMixConfig()),
    }


def train_baseline_vs_a2d(batch: LabeledBatch, base: TrainConfig, kinds=scoring.KINDS,
                          scorer_config=None, overrides=None, logitnorm_tau=0.04,
                          progress=None) -> ComparisonRecord:
    """Train the three arms from one initialization seed and evaluate every scorer.

    ``logitnorm_msp`` is scored on a companion model trained with LogitNorm in the
    same arm; pass ``logitnorm_tau=None`` to score it on the arm's own model.
    """
    reports, logs = {}, {}
    for block, cfg in block_configs(base).items():
        model, log = train(batch, cfg, progress)
        logs[block] = log
        main_kinds = [k for k in kinds if k != "logitnorm_msp" or logitnorm_tau is None]
        reps, _ = evaluate_scorers(model, batch, main_kinds, scorer_config, overrides)
        if "logitnorm_msp" in kinds and logitnorm_tau is not None:
            ln_model, _ = train(batch, replace(cfg, logitnorm_tau=logitnorm_tau), progress)
            ln, _ = evaluate_scorers(ln_model, batch, ["logitnorm_msp"], scorer_config, overrides)
            reps.update(ln)
        reports[block] = {k: reps[k] for k in kinds}
    return ComparisonRecord(reports, logs)


def comparison_markdown(record: ComparisonRecord) -> str:
    """Three-block table; parenthesised deltas are against the baseline, positive = better."""
    base = record.reports["baseline"]
    lines = []
    for block in BLOCKS:
        reps = record.reports[block]
        lines += [f"### {BLOCK_TITLES[block]} ({block})", "",
                  "| Method | FPR95↓ | AUROC↑ | ID ACC↑ |", "|---|---|---|---|"]
        for kind in sorted(reps):
            r, b = reps[kind], base[kind]
            cells = [
                (100 * r.fpr95, 100 * (b.fpr95 - r.fpr95)),
                (100 * r.auroc, 100 * (r.auroc - b.auroc)),
                (100 * r.id_acc, 100 * (r.id_acc - b.id_acc)),
            ]
            lines.append(f"| {kind} | " + " | ".join(f"{v:.2f} ({d:+.2f})" for v, d in cells) + " |")
        lines.append("")
    lines += ["### Modality prediction discrepancy", "",
              "| Block | l_ID | l_OOD | l_OOD - l_ID |", "|---|---|---|---|"]
    for block in BLOCKS:
        l_id, l_ood, delta = record.discrepancy(block)
        lines.append(f"| {block} | {l_id:.4f} | {l_ood:.4f} | {delta:.4f} |")
    return "\n".join(lines) + "\n"


def parse_comparison_markdown(text) -> dict:
    """Recover ``{block: {kind: (fpr, auroc, acc)}}`` and ``{'discrepancy': {block: (...)}}``."""
    out, block = {}, None
    for line in text.splitlines():
        if line.startswith("### "):
            block = line.rsplit("(", 1)[-1].rstrip(")") if line.endswith(")") else "discrepancy"
            out.setdefault(block, {})
            continue
        if not line.startswith("| ") or line.startswith("| Method") or line.startswith("| Block"):
            continue
        cells = [c.strip() for c in line.strip().strip("|").split("|")]
        out[block][cells[0]] = tuple(float(c.split()[0]) for c in cells[1:])
    return out
