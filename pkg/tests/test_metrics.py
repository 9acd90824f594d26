import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsegan.core import MaskedParam, Mlp
from sparsegan.errors import ConfigError
from sparsegan.harness.data import DatasetSpec, sample_dataset
from sparsegan.metrics import (
    FlopsLedger, GaussianSummary, fit_gaussian, forward_flops, frechet_2d, layer_counts, mode_stats,
    normalized_flops, record_flops,
)


def eig_sqrt(m):
    vals, vecs = np.linalg.eigh(m)
    return vecs @ np.diag(np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def frechet_oracle(a, b):
    """Tr sqrt(Sa Sb) via the symmetric form sqrt(Sa^1/2 Sb Sa^1/2) and eigh."""
    ra = eig_sqrt(a.cov)
    inner = eig_sqrt(ra @ b.cov @ ra)
    diff = a.mean - b.mean
    return diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2 * np.trace(inner)


def random_summary(rng):
    a = rng.normal(size=(2, 2))
    return GaussianSummary(rng.normal(size=2), a @ a.T)


def test_fit_gaussian_examples():
    g = fit_gaussian([[0.0, 0.0], [2.0, 0.0]])
    np.testing.assert_array_equal(g.mean, [1.0, 0.0])
    np.testing.assert_array_equal(g.cov, [[1.0, 0.0], [0.0, 0.0]])
    assert not fit_gaussian(np.ones((5, 2))).cov.any()
    with pytest.raises(ConfigError):
        fit_gaussian([[1.0, 2.0]])


def test_fit_gaussian_statistical():
    rng = np.random.default_rng(0)
    mean, cov = np.array([1.0, -2.0]), np.array([[2.0, 0.6], [0.6, 1.0]])
    n = 10_000
    g = fit_gaussian(rng.multivariate_normal(mean, cov, size=n))
    se_mean = np.sqrt(np.diag(cov) / n)
    assert np.all(np.abs(g.mean - mean) < 4 * se_mean)
    # var(s_ij) ~ (S_ij^2 + S_ii S_jj) / n for Gaussian data
    se_cov = np.sqrt((cov ** 2 + np.outer(np.diag(cov), np.diag(cov))) / n)
    assert np.all(np.abs(g.cov - cov) < 4 * se_cov)


def test_frechet_examples():
    a = GaussianSummary(np.array([0.5, 1.0]), np.array([[1.0, 0.3], [0.3, 2.0]]))
    assert frechet_2d(a, a) == pytest.approx(0.0, abs=1e-12)
    p = GaussianSummary(np.zeros(2), np.zeros((2, 2)))
    q = GaussianSummary(np.array([3.0, 4.0]), np.zeros((2, 2)))
    assert frechet_2d(p, q) == 25.0
    i1 = GaussianSummary(np.zeros(2), np.eye(2))
    i4 = GaussianSummary(np.zeros(2), 4 * np.eye(2))
    assert frechet_2d(i1, i4) == pytest.approx(2.0, abs=1e-12)
    assert frechet_oracle(i1, i4) == pytest.approx(2.0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_frechet_matches_eigen_oracle_and_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = random_summary(rng), random_summary(rng)
    assert frechet_2d(a, b) == pytest.approx(frechet_oracle(a, b), rel=1e-8, abs=1e-9)
    assert abs(frechet_2d(a, b) - frechet_2d(b, a)) < 1e-12 * max(1.0, frechet_2d(a, b))
    assert frechet_2d(a, a) == pytest.approx(0.0, abs=1e-9)


def test_mode_stats_examples():
    centers = DatasetSpec().centers()
    assert mode_stats(np.repeat(centers, 30, axis=0), centers, 0.02) == (8, 1.0)
    assert mode_stats(np.repeat(centers[:1], 240, axis=0), centers, 0.02)[0] == 1


def test_mode_stats_on_real_ring_data():
    spec = DatasetSpec()
    n = 8000
    covered, hq = mode_stats(sample_dataset(spec, n, np.random.default_rng(1)), spec.centers(), spec.sigma)
    # radial 3-sigma mass of an isotropic 2D Gaussian (Rayleigh tail)
    p = 1.0 - np.exp(-4.5)
    assert covered == 8
    assert abs(hq - p) < 4 * np.sqrt(p * (1 - p) / n)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 300))
def test_mode_stats_bounded(seed, n):
    rng = np.random.default_rng(seed)
    centers = DatasetSpec().centers()
    covered, hq = mode_stats(rng.normal(scale=2.0, size=(n, 2)), centers, 0.02)
    assert 0 <= covered <= 8 and 0.0 <= hq <= 1.0


def test_forward_flops_counts():
    dense = Mlp([MaskedParam(np.ones((4, 2)), np.zeros(4), np.ones((4, 2)))])
    half = Mlp([MaskedParam(np.ones((4, 2)), np.zeros(4), [[1, 0]] * 4)])
    assert forward_flops(layer_counts(dense), 1) == 20
    assert forward_flops(layer_counts(half), 1) == 12


def test_ledger_directions_and_normalization():
    ledger = FlopsLedger()
    layers = [(4, 8, 4)]
    record_flops(ledger, "D", layers, 1, "forward")
    record_flops(ledger, "D", layers, 1, "backward")
    assert ledger.forward["D"] == 12 and ledger.backward["D"] == 24
    assert ledger.dense_total == 60
    assert normalized_flops(ledger) == 36 / 60
    with pytest.raises(ConfigError):
        normalized_flops(FlopsLedger())
    with pytest.raises(ConfigError):
        record_flops(ledger, "D", layers, 1, "sideways")


def test_dense_ledger_normalizes_to_one():
    ledger = FlopsLedger()
    for _ in range(3):
        record_flops(ledger, "G", [(8, 8, 4), (4, 4, 1)], 16, "forward")
        record_flops(ledger, "G", [(8, 8, 4), (4, 4, 1)], 16, "backward")
    assert normalized_flops(ledger) == 1.0
