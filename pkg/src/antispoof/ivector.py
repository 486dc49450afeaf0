"""Total-variability subspace training and i-vector extraction.

The factor-analysis model ties an utterance's centered Baum-Welch
statistics to a low-rank subspace; the posterior mean of the latent
factor is the i-vector. Also hosts the small PCA used to compress
log-posteriorgrams for tandem features.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .gmm import BaumWelchStats, GmmModel


class IVectorError(ValueError):
    """Raised for invalid subspace-model inputs."""


@dataclass
class TotalVariabilityModel:
    """Low-rank matrix T (C*dim x R) plus the UBM it was trained against."""

    t: np.ndarray
    ubm: GmmModel
    objectives: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        if not np.all(np.isfinite(self.t)):
            raise IVectorError("T contains non-finite values")
        if self.t.shape[0] != self.ubm.n_components * self.ubm.dim:
            raise IVectorError(
                f"T has {self.t.shape[0]} rows, expected C*dim = "
                f"{self.ubm.n_components * self.ubm.dim}"
            )

    @property
    def rank(self) -> int:
        return self.t.shape[1]

    @property
    def blocks(self) -> np.ndarray:
        """T reshaped to per-component blocks (C, dim, R)."""
        return self.t.reshape(self.ubm.n_components, self.ubm.dim, self.rank)


def _precisions(tv: TotalVariabilityModel):
    """Per-component Sigma^-1 T blocks and Gram matrices T' Sigma^-1 T."""
    blocks = tv.blocks
    sig_inv_t = blocks / tv.ubm.variances[:, :, None]
    gram = np.einsum("cdr,cds->crs", blocks, sig_inv_t)
    return sig_inv_t, gram


def _posterior_moments(n_mat, f_mat, sig_inv_t, gram, rank, want_cov):
    """Batched latent posterior means (and covariances) for stacked stats."""
    lam = np.eye(rank)[None, :, :] + np.einsum("uc,crs->urs", n_mat, gram)
    b = np.einsum("ucd,cdr->ur", f_mat, sig_inv_t)
    mean = np.linalg.solve(lam, b[:, :, None])[:, :, 0]
    if not want_cov:
        return lam, mean, None
    cov = np.linalg.inv(lam)
    return lam, mean, cov


def train_tv(
    stats_list: list[BaumWelchStats],
    ubm: GmmModel,
    rank: int,
    iters: int = 10,
    seed: int = 0,
) -> TotalVariabilityModel:
    """EM estimation of the total-variability matrix.

    E-step: latent posterior with precision I + T' Sigma^-1 N T per
    utterance; M-step: per-component linear solves. Initialised with
    seeded Gaussian noise at scale 0.1; iters=0 returns that
    initialisation. The model's observed-data objective (up to additive
    constants) is traced per iteration.
    """
    if not stats_list:
        raise IVectorError("empty stats list")
    c, dim = ubm.n_components, ubm.dim
    if rank > c * dim:
        raise IVectorError(f"rank {rank} > supervector dim {c * dim}")
    rng = np.random.default_rng(seed)
    t = rng.standard_normal((c * dim, rank)) * 0.1
    tv = TotalVariabilityModel(t, ubm)

    n_mat = np.stack([s.n for s in stats_list])  # (U, C)
    f_mat = np.stack([s.f for s in stats_list])  # (U, C, dim)

    trace = []
    for _ in range(iters):
        sig_inv_t, gram = _precisions(tv)
        lam, mean, cov = _posterior_moments(n_mat, f_mat, sig_inv_t, gram, rank, True)
        _, logdet = np.linalg.slogdet(lam)
        quad = np.einsum("ur,urs,us->u", mean, lam, mean)
        trace.append(float(np.sum(-0.5 * logdet + 0.5 * quad)))
        second = cov + np.einsum("ur,us->urs", mean, mean)
        acc_a = np.einsum("uc,urs->crs", n_mat, second)  # (C, R, R)
        acc_b = np.einsum("ucd,ur->cdr", f_mat, mean)  # (C, dim, R)
        new_blocks = np.linalg.solve(acc_a, np.transpose(acc_b, (0, 2, 1)))
        tv = TotalVariabilityModel(np.transpose(new_blocks, (0, 2, 1)).reshape(c * dim, rank), ubm)
    tv.objectives = trace
    return tv


def extract_ivector(stats: BaumWelchStats, tv: TotalVariabilityModel) -> np.ndarray:
    """Posterior-mean i-vector (I + T'S^-1NT)^-1 T'S^-1 F via an SPD solve."""
    if not (np.all(np.isfinite(stats.n)) and np.all(np.isfinite(stats.f))):
        raise IVectorError("non-finite Baum-Welch statistics")
    if stats.n.sum() == 0:
        warnings.warn("empty utterance statistics: i-vector falls back to the prior mean")
        return np.zeros(tv.rank)
    sig_inv_t, gram = _precisions(tv)
    lam = np.eye(tv.rank) + np.einsum("c,crs->rs", stats.n, gram)
    b = np.einsum("cd,cdr->r", stats.f, sig_inv_t)
    return cho_solve(cho_factor(lam), b)


def extract_ivectors(stats_list: list[BaumWelchStats], tv: TotalVariabilityModel) -> np.ndarray:
    """Batch extraction; rows are per-utterance i-vectors."""
    if not stats_list:
        return np.zeros((0, tv.rank))
    n_mat = np.stack([s.n for s in stats_list])
    f_mat = np.stack([s.f for s in stats_list])
    if not (np.all(np.isfinite(n_mat)) and np.all(np.isfinite(f_mat))):
        raise IVectorError("non-finite Baum-Welch statistics")
    sig_inv_t, gram = _precisions(tv)
    _, mean, _ = _posterior_moments(n_mat, f_mat, sig_inv_t, gram, tv.rank, False)
    return mean


# ---------------------------------------------------------------------------
# PCA


@dataclass
class PcaModel:
    """Mean-centered projection onto the leading principal axes."""

    mean: np.ndarray
    components: np.ndarray  # (k, dim), orthonormal rows

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (x - self.mean) @ self.components.T


def train_pca(vectors, k: int) -> PcaModel:
    """Top-k eigenvectors of the sample covariance, eigenvalue-descending.

    Sign convention: the largest-magnitude entry of each component is made
    positive so results are deterministic across LAPACK builds.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise IVectorError("expected a 2-D array of vectors")
    if k > x.shape[1]:
        raise IVectorError(f"k {k} > vector dim {x.shape[1]}")
    if x.shape[0] < k + 1:
        raise IVectorError(f"need at least k+1 = {k + 1} vectors, got {x.shape[0]}")
    mean = x.mean(axis=0)
    cov = np.cov(x - mean, rowvar=False, bias=False)
    cov = np.atleast_2d(cov)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:k]
    comps = eigvecs[:, order].T
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean, comps)


def apply_pca(v: np.ndarray, model: PcaModel) -> np.ndarray:
    return model.transform(v)
