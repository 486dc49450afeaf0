import numpy as np
import pytest
from scipy.linalg import cho_factor

from antispoof import (
    BaumWelchStats,
    GmmModel,
    IVectorError,
    TotalVariabilityModel,
    apply_pca,
    extract_ivector,
    extract_ivectors,
    train_pca,
    train_tv,
)


def random_ubm(rng, c, dim):
    weights = rng.random(c) + 0.5
    weights /= weights.sum()
    return GmmModel(weights, rng.standard_normal((c, dim)), rng.random((c, dim)) + 0.5)


def random_stats(rng, c, dim, scale=1.0):
    n = rng.random(c) * 20.0
    f = rng.standard_normal((c, dim)) * scale
    return BaumWelchStats(n, f)


def dense_oracle(stats, tv):
    """Direct construction of the full supervector-space linear system."""
    c, dim = tv.ubm.n_components, tv.ubm.dim
    sigma_inv = np.diag(1.0 / tv.ubm.variances.reshape(c * dim))
    n_expanded = np.diag(np.repeat(stats.n, dim))
    lam = np.eye(tv.rank) + tv.t.T @ sigma_inv @ n_expanded @ tv.t
    rhs = tv.t.T @ sigma_inv @ stats.f.reshape(c * dim)
    return np.linalg.inv(lam) @ rhs


def test_scalar_closed_form():
    ubm = GmmModel([1.0], [[0.0]], [[1.0]])
    tv = TotalVariabilityModel(np.array([[1.0]]), ubm)
    x = extract_ivector(BaumWelchStats(np.array([4.0]), np.array([[2.0]])), tv)
    assert abs(x[0] - 0.4) < 1e-12


def test_zero_stats_give_zero_ivector():
    rng = np.random.default_rng(0)
    ubm = random_ubm(rng, 3, 2)
    tv = TotalVariabilityModel(rng.standard_normal((6, 2)), ubm)
    stats = BaumWelchStats(np.array([3.0, 1.0, 2.0]), np.zeros((3, 2)))
    assert np.allclose(extract_ivector(stats, tv), 0.0)


def test_empty_utterance_warns_and_returns_prior_mean():
    rng = np.random.default_rng(1)
    ubm = random_ubm(rng, 2, 2)
    tv = TotalVariabilityModel(rng.standard_normal((4, 3)), ubm)
    stats = BaumWelchStats(np.zeros(2), np.zeros((2, 2)))
    with pytest.warns(UserWarning, match="empty"):
        x = extract_ivector(stats, tv)
    assert np.allclose(x, 0.0)


def test_extraction_matches_dense_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        c = int(rng.integers(1, 5))
        dim = int(rng.integers(1, 4))
        rank = int(rng.integers(1, 4))
        ubm = random_ubm(rng, c, dim)
        tv = TotalVariabilityModel(rng.standard_normal((c * dim, rank)), ubm)
        stats = random_stats(rng, c, dim)
        fast = extract_ivector(stats, tv)
        assert np.max(np.abs(fast - dense_oracle(stats, tv))) < 1e-9


def test_extraction_linearity_in_f():
    rng = np.random.default_rng(3)
    ubm = random_ubm(rng, 4, 3)
    tv = TotalVariabilityModel(rng.standard_normal((12, 5)), ubm)
    stats = random_stats(rng, 4, 3)
    x1 = extract_ivector(stats, tv)
    x2 = extract_ivector(BaumWelchStats(stats.n, 3.5 * stats.f), tv)
    assert np.allclose(x2, 3.5 * x1, atol=1e-12)


def test_posterior_precision_is_spd():
    rng = np.random.default_rng(4)
    ubm = random_ubm(rng, 4, 3)
    tv = TotalVariabilityModel(rng.standard_normal((12, 5)), ubm)
    blocks = tv.blocks
    gram = np.einsum("cdr,cds->crs", blocks, blocks / ubm.variances[:, :, None])
    for _ in range(20):
        n = rng.random(4) * rng.choice([0.0, 1.0, 100.0], size=4)
        lam = np.eye(5) + np.einsum("c,crs->rs", n, gram)
        cho_factor(lam)  # raises if not positive definite


def test_doubled_stats_match_oracle():
    rng = np.random.default_rng(5)
    ubm = random_ubm(rng, 3, 2)
    tv = TotalVariabilityModel(rng.standard_normal((6, 4)), ubm)
    stats = random_stats(rng, 3, 2)
    doubled = BaumWelchStats(2.0 * stats.n, 2.0 * stats.f)
    assert np.max(np.abs(extract_ivector(doubled, tv) - dense_oracle(doubled, tv))) < 1e-9


def test_batch_extraction_matches_single():
    rng = np.random.default_rng(6)
    ubm = random_ubm(rng, 3, 2)
    tv = TotalVariabilityModel(rng.standard_normal((6, 4)), ubm)
    stats = [random_stats(rng, 3, 2) for _ in range(7)]
    batch = extract_ivectors(stats, tv)
    singles = np.array([extract_ivector(s, tv) for s in stats])
    assert np.max(np.abs(batch - singles)) < 1e-10


# ---------------------------------------------------------------------------
# TV training


def synthesize_tv_data(rng, c=8, dim=4, rank=5, n_utts=300):
    """Generative data: stats produced by a known low-rank offset model."""
    ubm = random_ubm(rng, c, dim)
    t_true = rng.standard_normal((c * dim, rank))
    latents = rng.standard_normal((n_utts, rank))
    stats = []
    for u in range(n_utts):
        n = rng.random(c) * 40.0 + 20.0
        offset = (t_true @ latents[u]).reshape(c, dim)
        noise = rng.standard_normal((c, dim)) * np.sqrt(ubm.variances * n[:, None])
        f = n[:, None] * offset + noise
        stats.append(BaumWelchStats(n, f))
    return ubm, t_true, latents, stats


def canonical_correlations(a, b):
    qa = np.linalg.qr(a - a.mean(axis=0))[0]
    qb = np.linalg.qr(b - b.mean(axis=0))[0]
    return np.linalg.svd(qa.T @ qb, compute_uv=False)


def test_tv_recovery_and_objective():
    rng = np.random.default_rng(7)
    ubm, t_true, latents, stats = synthesize_tv_data(rng)
    tv = train_tv(stats, ubm, rank=5, iters=12, seed=0)
    diffs = np.diff(tv.objectives)
    assert np.all(diffs >= -1e-6)
    ivecs = extract_ivectors(stats, tv)
    corr = canonical_correlations(ivecs, latents)
    assert corr.min() >= 0.9


def test_tv_zero_iters_returns_seeded_init():
    rng = np.random.default_rng(8)
    ubm = random_ubm(rng, 3, 2)
    stats = [random_stats(rng, 3, 2) for _ in range(5)]
    tv = train_tv(stats, ubm, rank=3, iters=0, seed=11)
    expected = np.random.default_rng(11).standard_normal((6, 3)) * 0.1
    assert np.array_equal(tv.t, expected)


def test_tv_errors():
    rng = np.random.default_rng(9)
    ubm = random_ubm(rng, 2, 2)
    with pytest.raises(IVectorError, match="empty"):
        train_tv([], ubm, rank=2)
    stats = [random_stats(rng, 2, 2)]
    with pytest.raises(IVectorError, match="rank"):
        train_tv(stats, ubm, rank=5)


def test_tv_determinism():
    rng = np.random.default_rng(10)
    ubm = random_ubm(rng, 3, 2)
    stats = [random_stats(rng, 3, 2) for _ in range(20)]
    a = train_tv(stats, ubm, rank=3, iters=4, seed=3)
    b = train_tv(stats, ubm, rank=3, iters=4, seed=3)
    assert np.array_equal(a.t, b.t)


# ---------------------------------------------------------------------------
# PCA


def test_pca_exact_subspace_reconstruction():
    rng = np.random.default_rng(11)
    basis = np.linalg.qr(rng.standard_normal((10, 3)))[0][:, :3]
    data = rng.standard_normal((40, 3)) @ basis.T + 2.0
    pca = train_pca(data, 3)
    recon = pca.transform(data) @ pca.components + pca.mean
    assert np.max(np.abs(recon - data)) < 1e-9


def test_pca_isotropic_variance_fraction():
    rng = np.random.default_rng(12)
    data = rng.standard_normal((20000, 10))
    pca = train_pca(data, 4)
    projected = pca.transform(data)
    fraction = projected.var(axis=0).sum() / data.var(axis=0).sum()
    assert abs(fraction - 0.4) < 0.02


def test_pca_full_rank_is_isometry():
    rng = np.random.default_rng(13)
    data = rng.standard_normal((50, 6))
    pca = train_pca(data, 6)
    assert np.allclose(pca.components @ pca.components.T, np.eye(6), atol=1e-9)
    proj = pca.transform(data)
    d_in = np.linalg.norm(data[:, None] - data[None, :], axis=2)
    d_out = np.linalg.norm(proj[:, None] - proj[None, :], axis=2)
    assert np.max(np.abs(d_in - d_out)) < 1e-9


def test_pca_sign_convention_and_order():
    rng = np.random.default_rng(14)
    data = rng.standard_normal((500, 5)) * np.array([5.0, 3.0, 1.0, 0.5, 0.1])
    pca = train_pca(data, 5)
    for row in pca.components:
        assert row[np.argmax(np.abs(row))] > 0
    variances = pca.transform(data).var(axis=0)
    assert np.all(np.diff(variances) <= 1e-9)


def test_pca_errors_and_apply():
    rng = np.random.default_rng(15)
    with pytest.raises(IVectorError, match="k"):
        train_pca(rng.standard_normal((10, 3)), 4)
    with pytest.raises(IVectorError):
        train_pca(rng.standard_normal((3, 5)), 3)
    pca = train_pca(rng.standard_normal((20, 4)), 2)
    v = rng.standard_normal(4)
    assert np.allclose(apply_pca(v, pca), pca.transform(v[None, :])[0])
