import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from moodkit.a2d import A2DConfig
from moodkit.errors import ArgumentError, ShapeError
from moodkit.model import (AdamState, DenseLayer, MultimodalModel, adam_step, backward,
                           cross_entropy, entropy, forward, init_model, load_checkpoint,
                           logitnorm_logits, save_checkpoint, softmax)
from moodkit.npmix import NpMixConfig, compute_prototypes, npmix_synthesize
from moodkit.types import seeded_rng

from conftest import finite_difference, max_relative_error


def zero_model(dims, C, e=3, hdim=4):
    m = init_model(dims, C, seeded_rng(0), hdim, e)
    for _, a in m.named_parameters():
        a[...] = 0.0
    return m


# --- primitives -------------------------------------------------------------

def test_softmax_examples():
    np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3)
    big = softmax([1000.0, 0.0])
    assert np.all(np.isfinite(big)) and big[0] == 1.0 and big[1] < 1e-300
    np.testing.assert_allclose(softmax([2.0, 0.0]), [0.880797077977882444, 0.119202922022117556],
                               rtol=1e-15)


def test_cross_entropy_examples():
    assert cross_entropy([0.0, 1.0, 0.0], 1) == 0.0
    assert cross_entropy(np.full(5, 0.2), 3) == pytest.approx(math.log(5))
    assert cross_entropy([0.5, 0.25, 0.25], 1) == pytest.approx(1.38629436111989062, rel=1e-15)
    assert cross_entropy([1.0, 0.0], 1) == pytest.approx(-math.log(1e-12))
    with pytest.raises(ArgumentError):
        cross_entropy([0.5, 0.5], 2)


def test_entropy_examples():
    assert entropy([0, 0, 1.0]) == 0.0
    assert entropy(np.full(6, 1 / 6)) == pytest.approx(math.log(6))
    assert entropy([0.5, 0.5, 0, 0]) == pytest.approx(math.log(2))


def test_logitnorm_examples():
    np.testing.assert_allclose(logitnorm_logits([0.6, 0.8], 1.0), [0.6, 0.8])
    np.testing.assert_allclose(logitnorm_logits([3.0, 4.0], 1.0), [0.6, 0.8])
    np.testing.assert_allclose(logitnorm_logits([30.0, 40.0], 0.5), logitnorm_logits([3.0, 4.0], 0.5))
    with pytest.raises(ArgumentError):
        logitnorm_logits([1.0], 0.0)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 5, elements=st.floats(-1e3, 1e3)).filter(lambda v: np.linalg.norm(v) > 1e-3),
       st.floats(0.01, 10))
def test_logitnorm_norm_is_inverse_tau(v, tau):
    assert np.linalg.norm(logitnorm_logits(v, tau)) == pytest.approx(1 / tau, rel=1e-9)


# --- forward ----------------------------------------------------------------

def test_zero_model_uniform():
    m = zero_model([3, 2], 4)
    b = forward(m, [np.random.default_rng(0).normal(size=(5, d)) for d in (3, 2)])
    np.testing.assert_allclose(b.joint_probs, 0.25)
    for p in b.modality_probs:
        np.testing.assert_allclose(p, 0.25)


def test_identity_toy():
    eye = np.eye(2)
    enc = (DenseLayer(eye, np.zeros(2), "relu"), DenseLayer(eye, np.zeros(2)))
    m = MultimodalModel([enc], [DenseLayer(eye, np.zeros(2))], DenseLayer(eye, np.zeros(2)))
    b = forward(m, [np.array([[1.0, 0.0]])])
    np.testing.assert_allclose(b.joint_logits, [[1.0, 0.0]])
    np.testing.assert_allclose(b.joint_probs, [[0.731058578630004879, 0.268941421369995121]],
                               rtol=1e-15)


def test_forward_row_permutation(small_model, rng):
    x = [rng.normal(size=(7, d)) for d in (3, 4)]
    perm = rng.permutation(7)
    a = forward(small_model, x)
    b = forward(small_model, [m[perm] for m in x])
    np.testing.assert_allclose(b.joint_probs, a.joint_probs[perm], rtol=0, atol=1e-15)
    np.testing.assert_allclose(b.embeddings[1], a.embeddings[1][perm], rtol=0, atol=1e-15)


def test_forward_pure_and_normalized(small_model, rng):
    x = [rng.normal(size=(9, d)) * 5 for d in (3, 4)]
    a, b = forward(small_model, x), forward(small_model, x)
    assert a.joint_probs.tobytes() == b.joint_probs.tobytes()
    for p in [a.joint_probs] + a.modality_probs:
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_forward_dim_mismatch(small_model):
    with pytest.raises(ShapeError):
        forward(small_model, [np.zeros((2, 3)), np.zeros((2, 5))])
    with pytest.raises(ShapeError):
        forward(small_model, [np.zeros((2, 3))])


# --- backward ---------------------------------------------------------------

def test_zero_model_joint_bias_gradient():
    m = zero_model([2, 2], 3)
    x = [np.ones((4, 2)), np.ones((4, 2))]
    y = np.array([0, 1, 2, 2])
    _, g = backward(m, x, y, A2DConfig(gamma=0.0))
    onehot = np.eye(3)[y]
    expected = ((1 / 3 - onehot) / 3).mean(axis=0)  # 3 CE terms averaged for M=2
    np.testing.assert_allclose(g["joint.b"], expected, atol=1e-15)


def _setup(rng, dims, C, n, e=4, hdim=5):
    m = init_model(dims, C, seeded_rng(int(rng.integers(1 << 30))), hdim, e)
    x = [rng.normal(size=(n, d)) for d in dims]
    y = rng.integers(0, C, n)
    return m, x, y


@pytest.mark.parametrize("metric", ["hellinger", "l1", "l2", "wasserstein1d"])
@pytest.mark.parametrize("use_npmix", [False, True])
def test_backward_matches_finite_differences(metric, use_npmix, rng):
    m, x, y = _setup(rng, [3, 2, 4], 4, 6)
    synth = rng.normal(size=(5, 12)) if use_npmix else None
    cfg = A2DConfig(0.8, metric, use_npmix)
    _, g = backward(m, x, y, cfg, synth)
    num = finite_difference(lambda: backward(m, x, y, cfg, synth)[0].total, m.named_parameters())
    assert max_relative_error(g, num) < 1e-4


def test_backward_logitnorm_matches_finite_differences(rng):
    m, x, y = _setup(rng, [3, 2], 3, 5)
    cfg = A2DConfig(0.5)
    _, g = backward(m, x, y, cfg, logitnorm_tau=0.3)
    num = finite_difference(lambda: backward(m, x, y, cfg, logitnorm_tau=0.3)[0].total,
                            m.named_parameters())
    assert max_relative_error(g, num) < 1e-4


def test_backward_through_mixed_embeddings(rng):
    m, x, y = _setup(rng, [3, 2], 3, 6)
    y = np.array([0, 1, 0, 1, 0, 1])  # class 2 only in the pool
    pool = rng.normal(size=(9, 8))
    pool_labels = np.array([0, 1, 2] * 3)
    protos = compute_prototypes(pool, pool_labels, 3)
    synth = npmix_synthesize(forward(m, x).joint_embedding, y, protos, NpMixConfig(2, 2.0),
                             seeded_rng(5), pool, pool_labels, count=8)
    assert np.any(synth.pool_b == 1)
    cfg = A2DConfig(0.6, use_npmix=True)
    _, g = backward(m, x, y, cfg, synth, synth_pool=pool)
    num = finite_difference(lambda: backward(m, x, y, cfg, synth, synth_pool=pool)[0].total,
                            m.named_parameters())
    assert max_relative_error(g, num) < 1e-4


def test_gamma_zero_and_linearity(rng):
    m, x, y = _setup(rng, [3, 2], 3, 5)
    _, g0 = backward(m, x, y, A2DConfig(0.0))
    _, g1 = backward(m, x, y, A2DConfig(1.0))
    _, g2 = backward(m, x, y, A2DConfig(2.0))
    for name in g0:
        np.testing.assert_allclose(g2[name] - g0[name], 2 * (g1[name] - g0[name]), atol=1e-13)


# --- optimizer --------------------------------------------------------------

def _scalar_model(value):
    layer = DenseLayer(np.array([[value]]), np.array([0.0]))
    enc = (DenseLayer(np.array([[1.0]]), np.array([0.0]), "relu"), DenseLayer(np.array([[1.0]]), np.array([0.0])))
    return MultimodalModel([enc], [layer], DenseLayer(np.array([[1.0]]), np.array([0.0])))


def test_adam_first_step():
    m = _scalar_model(1.0)
    grads = {name: np.zeros_like(a) for name, a in m.named_parameters()}
    grads["head0.w"] = np.array([[0.3]])
    adam_step(m, grads, AdamState(), lr=0.01)
    # bias-corrected first step: m_hat = g, v_hat = g^2
    assert m.heads[0].weight[0, 0] == pytest.approx(1.0 - 0.01 * 0.3 / (0.3 + 1e-8), rel=1e-14)


def test_adam_zero_gradient_keeps_params_and_decays_moments():
    m = _scalar_model(1.0)
    state = AdamState()
    grads = {name: np.zeros_like(a) for name, a in m.named_parameters()}
    before = [a.copy() for _, a in m.named_parameters()]
    adam_step(m, grads, state, lr=0.1)
    for b, (_, a) in zip(before, m.named_parameters()):
        np.testing.assert_array_equal(a, b)
    grads["head0.w"] = np.array([[1.0]])
    adam_step(m, grads, state, lr=0.1)
    m1 = state.m["head0.w"].copy()
    grads["head0.w"] = np.array([[0.0]])
    w = m.heads[0].weight.copy()
    adam_step(m, grads, state, lr=0.1)
    np.testing.assert_allclose(state.m["head0.w"], 0.9 * m1)
    assert m.heads[0].weight[0, 0] < w[0, 0]  # momentum keeps moving


def test_adam_deterministic(rng):
    def run():
        m, x, y = _setup(np.random.default_rng(4), [3, 2], 3, 6)
        st_ = AdamState()
        for _ in range(100):
            _, g = backward(m, x, y, A2DConfig(0.5))
            adam_step(m, g, st_, 1e-3)
        return b"".join(a.tobytes() for _, a in m.named_parameters())
    assert run() == run()


# --- checkpoint -------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path, small_model):
    p = tmp_path / "ck.json"
    save_checkpoint(small_model, p)
    loaded = load_checkpoint(p)
    for (n1, a), (n2, b) in zip(small_model.named_parameters(), loaded.named_parameters()):
        assert n1 == n2
        np.testing.assert_array_equal(a, b)
    save_checkpoint(loaded, tmp_path / "again.json")
    assert p.read_bytes() == (tmp_path / "again.json").read_bytes()


def test_checkpoint_rejects_foreign(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other", "version": 1}')
    with pytest.raises(ArgumentError):
        load_checkpoint(p)
