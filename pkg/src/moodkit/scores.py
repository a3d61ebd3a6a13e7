"""Post-hoc OOD scorers. Higher score means more in-distribution.

Feature-space scorers read the combined embedding ``[Z^1, ..., Z^M]``;
output-space scorers read the joint head's logits or probabilities. ViM reads
both.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .errors import ArgumentError, NumericalError, StateError
from .model import joint_logits_from_embedding

KINDS = ("msp", "maxlogit", "energy", "gen", "mahalanobis", "knn", "vim", "react", "ash",
         "logitnorm_msp")

# which parts of a PredictionBundle each scorer consumes
ROUTES = {
    "msp": ("joint_probs",),
    "logitnorm_msp": ("joint_probs",),
    "gen": ("joint_probs",),
    "energy": ("joint_logits",),
    "maxlogit": ("joint_logits",),
    "mahalanobis": ("joint_embedding",),
    "knn": ("joint_embedding",),
    "react": ("joint_embedding",),
    "ash": ("joint_embedding",),
    "vim": ("joint_embedding", "joint_logits"),
}
NEEDS_FIT = frozenset({"mahalanobis", "knn", "vim", "react"})


@dataclass(frozen=True)
class ScorerConfig:
    temperature: float = 1.0
    gen_gamma: float = 0.1
    gen_top_m: int = 100  # capped at C
    knn_k: int = 10  # capped at bank size
    react_percentile: float = 90.0
    ash_percentile: float = 90.0
    vim_dim: int = 64  # capped at d // 2
    mahalanobis_ridge: float = 1e-6  # times trace / d

    def with_overrides(self, overrides: dict | None) -> "ScorerConfig":
        return replace(self, **(overrides or {}))


@dataclass
class ScorerState:
    kind: str
    config: ScorerConfig = field(default_factory=ScorerConfig)
    fitted: dict = field(default_factory=dict)
    is_fitted: bool = False


# ---------------------------------------------------------------------------
# per-row scorers
# ---------------------------------------------------------------------------

def score_msp(probs):
    return np.max(np.asarray(probs, dtype=np.float64), axis=-1)


def score_maxlogit(logits):
    return np.max(np.asarray(logits, dtype=np.float64), axis=-1)


def score_energy(logits, temperature=1.0):
    """Negative free energy ``T * logsumexp(logits / T)``."""
    z = np.asarray(logits, dtype=np.float64)
    return temperature * logsumexp(z / temperature, axis=-1)


def score_gen(probs, gen_gamma=0.1, top_m=None):
    """Generalized entropy over the ``top_m`` largest probabilities, negated."""
    if not 0 < gen_gamma < 1:
        raise ArgumentError("gen_gamma must lie in (0, 1)")
    p = np.asarray(probs, dtype=np.float64)
    C = p.shape[-1]
    m = C if top_m is None else min(int(top_m), C)
    top = np.sort(p, axis=-1)[..., C - m:]
    # clip guards (1 - p) against tiny negative rounding
    return -np.sum(top ** gen_gamma * np.clip(1.0 - top, 0.0, None) ** gen_gamma, axis=-1)


def score_mahalanobis(z, state: ScorerState):
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    means, prec = state.fitted["means"], state.fitted["precision"]
    best = np.full(z.shape[0], np.inf)
    for mu in means:
        diff = z - mu
        best = np.minimum(best, np.einsum("ij,jk,ik->i", diff, prec, diff))
    return -best


def _normalize_rows(x):
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.maximum(norm, 1e-12)


def score_knn(z, state: ScorerState, k=None, chunk=64):
    """Negative distance from the normalized query to its k-th nearest bank row."""
    z = _normalize_rows(np.atleast_2d(np.asarray(z, dtype=np.float64)))
    bank = state.fitted["bank"]
    k = state.fitted["k"] if k is None else min(int(k), bank.shape[0])
    out = np.empty(z.shape[0])
    for start in range(0, z.shape[0], chunk):
        q = z[start:start + chunk]
        d = np.sqrt(np.sum((q[:, None, :] - bank[None, :, :]) ** 2, axis=-1))
        out[start:start + chunk] = np.partition(d, k - 1, axis=1)[:, k - 1]
    return -out


def vim_residual_norm(z, state: ScorerState):
    x = np.atleast_2d(np.asarray(z, dtype=np.float64)) - state.fitted["center"]
    B = state.fitted["basis"]
    return np.linalg.norm(x - (x @ B) @ B.T, axis=-1)


def score_vim(z, logits, state: ScorerState):
    return logsumexp(np.asarray(logits, dtype=np.float64), axis=-1) \
        - state.fitted["alpha"] * vim_residual_norm(z, state)


def react_clip(z, threshold):
    return np.minimum(np.asarray(z, dtype=np.float64), threshold)


def score_react(z, model, state: ScorerState, temperature=1.0, threshold=None):
    tau = state.fitted["threshold"] if threshold is None else threshold
    logits = joint_logits_from_embedding(model, react_clip(np.atleast_2d(z), tau))
    return score_energy(logits, temperature)


def ash_prune(z, percentile=90.0):
    """Keep the ``ceil((1 - p/100) d)`` largest entries of each row, zero the rest.

    Ties at the cut keep the larger-index entries.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    d = z.shape[1]
    if not 0 <= percentile <= 100:
        raise ArgumentError("percentile must lie in [0, 100]")
    keep = math.ceil(round((100.0 - percentile) * d / 100.0, 9))
    if keep >= d:
        return z.copy()
    # stable ascending sort: among equal values the larger index sorts last
    order = np.argsort(z, axis=1, kind="stable")
    out = np.zeros_like(z)
    rows = np.arange(z.shape[0])[:, None]
    cols = order[:, d - keep:]
    out[rows, cols] = z[rows, cols]
    return out


def score_ash(z, model, percentile=90.0, temperature=1.0):
    logits = joint_logits_from_embedding(model, ash_prune(z, percentile))
    return score_energy(logits, temperature)


# ---------------------------------------------------------------------------
# lifecycle
# ---------------------------------------------------------------------------

def fit(kind, bundle, labels, model=None, config: ScorerConfig | None = None) -> ScorerState:
    """Fit scorer statistics from ID training predictions only."""
    if kind not in KINDS:
        raise ArgumentError(f"unknown scorer {kind!r}; expected one of {list(KINDS)}")
    cfg = config or ScorerConfig()
    state = ScorerState(kind, cfg)
    Z = bundle.joint_embedding
    if Z.shape[0] == 0:
        raise ArgumentError("empty training set")
    labels = np.asarray(labels, dtype=np.int64)

    if kind == "mahalanobis":
        C = bundle.joint_logits.shape[1]
        counts = np.bincount(labels, minlength=C)
        for c in range(C):
            if counts[c] < 2:
                raise ArgumentError(f"class {c} needs at least 2 samples, has {counts[c]}")
        means = np.stack([Z[labels == c].mean(axis=0) for c in range(C)])
        centered = Z - means[labels]
        cov = centered.T @ centered / Z.shape[0]
        d = cov.shape[0]
        cov = cov + cfg.mahalanobis_ridge * np.trace(cov) / d * np.eye(d)
        try:
            L = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("covariance is singular after regularization") from exc
        Linv = np.linalg.inv(L)
        prec = Linv.T @ Linv
        state.fitted = {"means": means, "precision": 0.5 * (prec + prec.T)}
    elif kind == "knn":
        bank = _normalize_rows(Z)
        state.fitted = {"bank": bank, "k": min(cfg.knn_k, bank.shape[0])}
    elif kind == "vim":
        d = Z.shape[1]
        dim = max(1, min(cfg.vim_dim, d // 2))
        center = Z.mean(axis=0)
        X = Z - center
        evals, evecs = np.linalg.eigh(X.T @ X / X.shape[0])
        basis = evecs[:, np.argsort(evals, kind="stable")[::-1][:dim]]
        state.fitted = {"center": center, "basis": basis}
        resid = vim_residual_norm(Z, state)
        mean_resid = float(np.mean(resid))
        if mean_resid <= 0:
            raise NumericalError("training features have zero residual; ViM scale undefined")
        state.fitted["alpha"] = float(np.mean(np.max(bundle.joint_logits, axis=1))) / mean_resid
    elif kind == "react":
        state.fitted = {"threshold": float(np.percentile(Z.ravel(), cfg.react_percentile))}
    state.is_fitted = True
    return state


def score_batch(state: ScorerState, bundle, model=None, config: ScorerConfig | None = None):
    """One score per row of ``bundle``, routed to the right representation."""
    if state.kind in NEEDS_FIT and not state.is_fitted:
        raise StateError(f"scorer {state.kind!r} must be fitted before scoring")
    cfg = config or state.config
    kind = state.kind
    if kind in ("msp", "logitnorm_msp"):
        out = score_msp(bundle.joint_probs)
    elif kind == "maxlogit":
        out = score_maxlogit(bundle.joint_logits)
    elif kind == "energy":
        out = score_energy(bundle.joint_logits, cfg.temperature)
    elif kind == "gen":
        out = score_gen(bundle.joint_probs, cfg.gen_gamma, cfg.gen_top_m)
    elif kind == "mahalanobis":
        out = score_mahalanobis(bundle.joint_embedding, state)
    elif kind == "knn":
        out = score_knn(bundle.joint_embedding, state)
    elif kind == "vim":
        out = score_vim(bundle.joint_embedding, bundle.joint_logits, state)
    elif kind == "react":
        out = score_react(bundle.joint_embedding, _need(model, kind), state, cfg.temperature)
    elif kind == "ash":
        out = score_ash(bundle.joint_embedding, _need(model, kind), cfg.ash_percentile,
                        cfg.temperature)
    else:
        raise ArgumentError(f"unknown scorer {kind!r}")
    out = np.asarray(out, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"scorer {kind!r} produced non-finite scores")
    return out


def _need(model, kind):
    if model is None:
        raise ArgumentError(f"scorer {kind!r} needs the model's joint head")
    return model
