"""Multimodal classifier with per-modality heads and a joint head.

Each modality ``k`` has an encoder ``g_k`` (dense+relu, dense) producing an
embedding ``Z^k``, and a head ``h_k`` mapping ``Z^k`` to ``C`` logits. The joint
head ``h`` reads the concatenation ``[Z^1, ..., Z^M]``. Gradients are exact and
hand-derived; :func:`backward` is checked against finite differences in the
test-suite.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, ShapeError
from .types import LabeledBatch, concat_modalities, split_modalities

PROB_FLOOR = 1e-12
CHECKPOINT_FORMAT = "moodkit-checkpoint"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def softmax(logits):
    """Max-shifted softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def cross_entropy(probs, label) -> float:
    """``-log probs[label]`` with the probability floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    label = int(label)
    if not 0 <= label < probs.shape[-1]:
        raise ArgumentError(f"label {label} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(probs[label], PROB_FLOOR)))


def entropy(probs):
    """Shannon entropy (nats) over the last axis, with 0 log 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    logp = np.log(np.where(p > 0, p, 1.0))
    return -np.sum(p * logp, axis=-1)


def logitnorm_logits(logits, tau):
    """Logits rescaled to constant L2 norm ``1/tau``."""
    if tau <= 0:
        raise ArgumentError("tau must be positive")
    z = np.asarray(logits, dtype=np.float64)
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    return z / (tau * (norm + PROB_FLOOR))


def softmax_backward(probs, grad_probs):
    """Map ``dL/dp`` to ``dL/dlogits`` through a row-wise softmax."""
    inner = np.sum(probs * grad_probs, axis=-1, keepdims=True)
    return probs * (grad_probs - inner)


def logitnorm_backward(logits, tau, grad_out):
    """Map ``dL/du`` to ``dL/dlogits`` for ``u = logitnorm_logits(logits, tau)``."""
    norm = np.linalg.norm(logits, axis=-1, keepdims=True)
    denom = norm + PROB_FLOOR
    proj = np.sum(logits * grad_out, axis=-1, keepdims=True)
    safe = np.where(norm > 0, norm, 1.0)
    radial = np.where(norm > 0, logits * proj / (denom * denom * safe), 0.0)
    return (grad_out / denom - radial) / tau


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass
class DenseLayer:
    weight: np.ndarray  # (d_out, d_in)
    bias: np.ndarray  # (d_out,)
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ("relu", "identity"):
            raise ArgumentError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"bad layer shapes {self.weight.shape}, {self.bias.shape}")

    @property
    def d_in(self):
        return self.weight.shape[1]

    @property
    def d_out(self):
        return self.weight.shape[0]

    def pre(self, x):
        return x @ self.weight.T + self.bias

    def __call__(self, x):
        a = self.pre(x)
        return np.maximum(a, 0.0) if self.activation == "relu" else a


def glorot_layer(d_in, d_out, rng, activation="identity") -> DenseLayer:
    limit = np.sqrt(6.0 / (d_in + d_out))
    return DenseLayer(rng.uniform(-limit, limit, size=(d_out, d_in)), np.zeros(d_out), activation)


@dataclass
class MultimodalModel:
    encoders: list  # [(DenseLayer relu, DenseLayer identity)] per modality
    heads: list  # [DenseLayer] per modality
    joint_head: DenseLayer

    @property
    def num_modalities(self):
        return len(self.encoders)

    @property
    def input_dims(self):
        return [enc[0].d_in for enc in self.encoders]

    @property
    def hidden_dim(self):
        return self.encoders[0][0].d_out

    @property
    def embed_dim(self):
        return self.encoders[0][1].d_out

    @property
    def num_classes(self):
        return self.joint_head.d_out

    @property
    def embed_dims(self):
        return [enc[1].d_out for enc in self.encoders]

    def named_parameters(self):
        """Ordered ``(name, array)`` pairs; arrays are live references."""
        out = []
        for k, (l1, l2) in enumerate(self.encoders):
            out += [(f"enc{k}.w1", l1.weight), (f"enc{k}.b1", l1.bias),
                    (f"enc{k}.w2", l2.weight), (f"enc{k}.b2", l2.bias)]
        for k, h in enumerate(self.heads):
            out += [(f"head{k}.w", h.weight), (f"head{k}.b", h.bias)]
        out += [("joint.w", self.joint_head.weight), ("joint.b", self.joint_head.bias)]
        return out

    def copy(self) -> "MultimodalModel":
        return MultimodalModel(
            [(DenseLayer(a.weight.copy(), a.bias.copy(), a.activation),
              DenseLayer(b.weight.copy(), b.bias.copy(), b.activation)) for a, b in self.encoders],
            [DenseLayer(h.weight.copy(), h.bias.copy(), h.activation) for h in self.heads],
            DenseLayer(self.joint_head.weight.copy(), self.joint_head.bias.copy()),
        )


def init_model(input_dims, num_classes, rng, hidden_dim=64, embed_dim=32) -> MultimodalModel:
    """Glorot-uniform weights, zero biases, drawn in a fixed order from ``rng``."""
    if num_classes < 2:
        raise ArgumentError("need at least 2 classes")
    encoders = [(glorot_layer(d, hidden_dim, rng, "relu"), glorot_layer(hidden_dim, embed_dim, rng))
                for d in input_dims]
    heads = [glorot_layer(embed_dim, num_classes, rng) for _ in input_dims]
    joint = glorot_layer(embed_dim * len(input_dims), num_classes, rng)
    return MultimodalModel(encoders, heads, joint)


@dataclass
class PredictionBundle:
    joint_logits: np.ndarray
    joint_probs: np.ndarray
    modality_logits: list
    modality_probs: list
    embeddings: list
    # encoder activations, kept for backward
    cache: list = field(default_factory=list, repr=False)

    @property
    def n(self):
        return self.joint_logits.shape[0]

    @property
    def joint_embedding(self):
        return concat_modalities(self.embeddings)


@dataclass
class HeadPredictions:
    """Per-modality head outputs for embeddings that skip the encoders."""
    embeddings: list
    modality_logits: list
    modality_probs: list


def _inputs(model, batch):
    mats = batch.modalities if isinstance(batch, LabeledBatch) else batch
    mats = [np.asarray(m, dtype=np.float64) for m in mats]
    if len(mats) != model.num_modalities:
        raise ShapeError(f"model has {model.num_modalities} modalities, batch has {len(mats)}")
    for k, (m, d) in enumerate(zip(mats, model.input_dims)):
        if m.ndim != 2 or m.shape[1] != d:
            raise ShapeError(f"modality {k}: expected width {d}, got shape {m.shape}")
    return mats


def forward(model: MultimodalModel, batch) -> PredictionBundle:
    """Joint and per-modality predictions for a batch (or list of matrices)."""
    mats = _inputs(model, batch)
    embeddings, cache, mlogits = [], [], []
    for x, (l1, l2), head in zip(mats, model.encoders, model.heads):
        h = l1(x)
        z = l2(h)
        embeddings.append(z)
        cache.append((x, h))
        mlogits.append(head(z))
    jlogits = model.joint_head(np.concatenate(embeddings, axis=1))
    return PredictionBundle(jlogits, softmax(jlogits), mlogits, [softmax(l) for l in mlogits],
                            embeddings, cache)


def joint_logits_from_embedding(model: MultimodalModel, joint_embedding) -> np.ndarray:
    """Run only the joint head on (possibly manipulated) combined embeddings."""
    return model.joint_head(np.asarray(joint_embedding, dtype=np.float64))


def predict_heads(model: MultimodalModel, joint_embedding) -> HeadPredictions:
    """Push combined embeddings through the per-modality heads ``h_k`` only."""
    parts = split_modalities(joint_embedding, model.embed_dims)
    logits = [head(z) for head, z in zip(model.heads, parts)]
    return HeadPredictions(parts, logits, [softmax(l) for l in logits])


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def backward(model: MultimodalModel, batch, labels, cfg, synth=None, logitnorm_tau=None,
             bundle=None, synth_pool=None):
    """Loss value and exact gradients for every parameter.

    Parameters
    ----------
    cfg : A2DConfig
        Selects the objective: ``gamma=0`` gives the classification loss only,
        otherwise classification plus discrepancy, plus the synthesized-outlier
        terms when ``cfg.use_npmix``.
    synth : ndarray or SynthesizedBatch, optional
        Synthesized outliers. A plain array is treated as constant, so its
        gradient reaches the modality heads only. A ``SynthesizedBatch`` is
        rebuilt from the current batch embeddings via its provenance (``lam``
        and indices held fixed) and also backpropagates into the encoders;
        rows sourced from ``synth_pool`` stay constant.
    logitnorm_tau : float, optional
        Apply LogitNorm to the logits of every cross-entropy term.
    bundle : PredictionBundle, optional
        Reuse a forward pass already computed for ``batch``.

    Returns
    -------
    terms : LossTerms
    grads : dict[str, ndarray]
        Keyed like :meth:`MultimodalModel.named_parameters`.
    """
    from .a2d import objective

    if bundle is None:
        bundle = forward(model, batch)
    mixed = None
    if synth is not None and hasattr(synth, "reconstruct"):
        mixed = synth
        synth = synth.reconstruct(bundle.joint_embedding, synth_pool)
    heads_out = predict_heads(model, synth) if synth is not None else None
    terms, g = objective(bundle, labels, cfg, heads_out, logitnorm_tau)

    grads = {}
    jw = model.joint_head.weight
    joint_in = np.concatenate(bundle.embeddings, axis=1)
    grads["joint.w"] = g.joint_logits.T @ joint_in
    grads["joint.b"] = g.joint_logits.sum(axis=0)
    dZ = g.joint_logits @ jw
    if mixed is not None:
        dsyn = np.concatenate([gs @ head.weight for gs, head in zip(g.synth_logits, model.heads)],
                              axis=1)
        lam = mixed.lam[:, None]
        a, b = mixed.pool_a == 0, mixed.pool_b == 0
        np.add.at(dZ, mixed.index_a[a], lam[a] * dsyn[a])
        np.add.at(dZ, mixed.index_b[b], (1.0 - lam[b]) * dsyn[b])
    dz_joint = split_modalities(dZ, model.embed_dims)

    for k, ((l1, l2), head) in enumerate(zip(model.encoders, model.heads)):
        gl = g.modality_logits[k]
        z = bundle.embeddings[k]
        gw = gl.T @ z
        gb = gl.sum(axis=0)
        if heads_out is not None:
            gs = g.synth_logits[k]
            gw = gw + gs.T @ heads_out.embeddings[k]
            gb = gb + gs.sum(axis=0)
        grads[f"head{k}.w"] = gw
        grads[f"head{k}.b"] = gb

        dz = gl @ head.weight + dz_joint[k]
        x, h = bundle.cache[k]
        grads[f"enc{k}.w2"] = dz.T @ h
        grads[f"enc{k}.b2"] = dz.sum(axis=0)
        dh = (dz @ l2.weight) * (h > 0)
        grads[f"enc{k}.w1"] = dh.T @ x
        grads[f"enc{k}.b1"] = dh.sum(axis=0)
    return terms, grads


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(model: MultimodalModel, grads: dict, state: AdamState, lr: float) -> None:
    """In-place bias-corrected Adam update of every parameter."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, param in model.named_parameters():
        g = grads[name]
        if g.shape != param.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {param.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(param)
            state.v[name] = np.zeros_like(param)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        param -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def model_to_dict(model: MultimodalModel) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": {
            "input_dims": model.input_dims,
            "hidden_dim": model.hidden_dim,
            "embed_dim": model.embed_dim,
            "num_classes": model.num_classes,
        },
        "params": {name: {"shape": list(a.shape), "data": a.ravel().tolist()}
                   for name, a in model.named_parameters()},
    }


def model_from_dict(doc: dict) -> MultimodalModel:
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ArgumentError("not a moodkit checkpoint (format/version mismatch)")
    dims = doc["dims"]
    model = init_model(dims["input_dims"], dims["num_classes"], np.random.default_rng(0),
                       dims["hidden_dim"], dims["embed_dim"])
    params = doc["params"]
    for name, arr in model.named_parameters():
        entry = params[name]
        data = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if data.shape != arr.shape:
            raise ShapeError(f"checkpoint tensor {name} has shape {data.shape}, expected {arr.shape}")
        arr[...] = data
    return model


def save_checkpoint(model: MultimodalModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n", encoding="utf-8")


def load_checkpoint(path) -> MultimodalModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
