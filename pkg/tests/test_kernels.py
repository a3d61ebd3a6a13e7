import numpy as np
import pytest

from moodkit import _pykernels, kernels
from moodkit.a2d import distance


METRIC_NAMES = {kernels.HELLINGER: "hellinger", kernels.L1: "l1", kernels.L2: "l2",
                kernels.WASSERSTEIN: "wasserstein1d"}


def test_dispatch_reports_backend():
    assert kernels.BACKEND in ("cython", "python")
    assert "python" in kernels.backends()


@pytest.mark.parametrize("metric", sorted(METRIC_NAMES))
def test_pair_discrepancy_matches_scalar_distance(backend, metric, rng):
    M, n, K = 3, 6, 5
    P = rng.dirichlet(np.ones(K), size=(M, n))
    dist, _ = backend.pair_discrepancy(P, metric)
    for r in range(n):
        pairs = [distance(P[i, r], P[j, r], METRIC_NAMES[metric])
                 for i in range(M) for j in range(i + 1, M)]
        assert dist[r] == pytest.approx(np.mean(pairs), abs=1e-14)


@pytest.mark.parametrize("metric", sorted(METRIC_NAMES))
def test_pair_discrepancy_gradient(backend, metric, rng):
    # unnormalized rows, like truncated predictions: full distributions put the
    # last CDF difference exactly on the |.| kink
    P = rng.uniform(0.05, 0.5, size=(2, 3, 4))
    _, grad = backend.pair_discrepancy(P, metric)
    h = 1e-6
    num = np.zeros_like(P)
    for idx in np.ndindex(P.shape):
        up, down = P.copy(), P.copy()
        up[idx] += h
        down[idx] -= h
        num[idx] = (backend.pair_discrepancy(up, metric)[0].sum()
                    - backend.pair_discrepancy(down, metric)[0].sum()) / (2 * h)
    np.testing.assert_allclose(grad, num, rtol=1e-5, atol=1e-7)


@pytest.mark.parametrize("metric", sorted(METRIC_NAMES))
def test_backends_agree(metric, rng):
    impls = kernels.backends()
    if len(impls) < 2:
        pytest.skip("compiled kernels not built")
    P = rng.dirichlet(np.ones(7), size=(3, 50))
    P[0, :5] = P[1, :5]  # identical rows exercise the zero-distance branch
    a = impls["python"].pair_discrepancy(P, metric)
    b = impls["cython"].pair_discrepancy(P, metric)
    np.testing.assert_allclose(a[0], b[0], rtol=0, atol=1e-13)
    np.testing.assert_allclose(a[1], b[1], rtol=0, atol=1e-12)


def test_auroc_backends_agree(rng):
    for _ in range(20):
        a = np.sort(rng.integers(0, 6, rng.integers(1, 30)).astype(float))
        b = np.sort(rng.integers(0, 6, rng.integers(1, 30)).astype(float))
        vals = {name: impl.auroc_sorted(a, b) for name, impl in kernels.backends().items()}
        assert len(set(vals.values())) == 1


def test_unknown_metric(backend):
    with pytest.raises(ValueError):
        backend.pair_discrepancy(np.ones((2, 1, 2)) / 2, 9)


def test_zero_distance_has_zero_gradient(backend):
    P = np.tile(np.array([0.2, 0.3, 0.5]), (2, 1, 1))
    for metric in METRIC_NAMES:
        d, g = backend.pair_discrepancy(P, metric)
        assert d[0] == 0.0
        if metric != kernels.L1 and metric != kernels.WASSERSTEIN:
            assert np.all(g == 0.0)


def test_pure_python_wasserstein_example():
    P = np.array([[[0.5, 0.5, 0.0]], [[0.0, 0.5, 0.5]]])
    assert _pykernels.pair_discrepancy(P, _pykernels.WASSERSTEIN)[0][0] == pytest.approx(1.0)
