"""FPR95, AUROC, ID accuracy and evaluation reports.

Scores follow the "higher = more in-distribution" convention and a sample is
accepted as ID when ``score >= threshold``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .errors import ArgumentError


def _scores(x, name):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ArgumentError(f"{name} is empty")
    return x


def fpr_at_tpr(id_scores, ood_scores, tpr_target=0.95) -> float:
    """Fraction of OOD scores at or above the highest threshold keeping TPR >= target.

    The threshold is the k-th smallest ID score with
    ``k = floor(n_id * (1 - tpr_target)) + 1``; no interpolation.
    """
    ids = np.sort(_scores(id_scores, "id_scores"))
    ood = _scores(ood_scores, "ood_scores")
    if not 0 < tpr_target <= 1:
        raise ArgumentError("tpr_target must be in (0, 1]")
    # rounding guards against 20 * (1 - 0.95) = 1.0000000000000009
    k = math.floor(round(ids.size * (1.0 - tpr_target), 9)) + 1
    eta = ids[k - 1]
    return float(np.count_nonzero(ood >= eta) / ood.size)


def auroc(id_scores, ood_scores) -> float:
    """P(id > ood) + 0.5 P(id == ood) over all (id, ood) pairs."""
    ids = np.sort(_scores(id_scores, "id_scores"))
    ood = np.sort(_scores(ood_scores, "ood_scores"))
    return float(kernels.auroc_sorted(ids, ood))


def id_accuracy(probs, labels) -> float:
    """Argmax accuracy; ``np.argmax`` breaks ties toward the smallest index."""
    probs = np.asarray(getattr(probs, "joint_probs", probs))
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ArgumentError("no samples")
    return float(np.mean(np.argmax(probs, axis=1) == labels))


@dataclass
class EvalReport:
    scorer_kind: str
    fpr95: float
    auroc: float
    id_acc: float
    l_id: float
    l_ood: float
    n_id: int
    n_ood: int

    def to_dict(self):
        return asdict(self)

    def to_json(self) -> str:
        # json uses repr(float): shortest string that round-trips exactly
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text) -> "EvalReport":
        return cls(**json.loads(text))


def evaluate(model, state, id_test, ood_test, config=None) -> EvalReport:
    """Score ID and OOD test splits with a fitted scorer and summarise."""
    from .a2d import discrepancy_statistic
    from .model import forward
    from .scores import score_batch

    b_id = forward(model, id_test)
    b_ood = forward(model, ood_test)
    s_id = score_batch(state, b_id, model, config)
    s_ood = score_batch(state, b_ood, model, config)
    return EvalReport(
        scorer_kind=state.kind,
        fpr95=fpr_at_tpr(s_id, s_ood),
        auroc=auroc(s_id, s_ood),
        id_acc=id_accuracy(b_id.joint_probs, id_test.labels),
        l_id=float(np.mean(discrepancy_statistic(b_id))),
        l_ood=float(np.mean(discrepancy_statistic(b_ood))),
        n_id=int(id_test.n),
        n_ood=int(ood_test.n),
    )


def markdown_table(reports, title=None) -> str:
    """Comparison table with FPR95 / AUROC / ID ACC columns (percent), sorted by scorer."""
    lines = []
    if title:
        lines += [f"### {title}", ""]
    lines += ["| Method | FPR95↓ | AUROC↑ | ID ACC↑ |", "|---|---|---|---|"]
    for r in sorted(reports, key=lambda r: r.scorer_kind):
        lines.append(f"| {r.scorer_kind} | {100 * r.fpr95:.2f} | {100 * r.auroc:.2f} "
                     f"| {100 * r.id_acc:.2f} |")
    return "\n".join(lines) + "\n"


def parse_markdown_table(text) -> dict:
    """Inverse of :func:`markdown_table` at the printed precision."""
    rows = {}
    for line in text.splitlines():
        cells = [c.strip() for c in line.strip().strip("|").split("|")]
        if len(cells) < 4 or cells[0] in ("Method", "---") or set(cells[1]) <= {"-"}:
            continue
        try:
            rows[cells[0]] = tuple(float(c.split()[0]) for c in cells[1:4])
        except ValueError:
            continue
    return rows
