"""Diagonal-covariance GMM training and Baum-Welch statistic accumulation.

The universal background model is trained with seeded k-means++
initialisation followed by EM; per-utterance zero-order counts and
centered first-order statistics against the trained model feed the
total-variability stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_LOG_2PI = np.log(2.0 * np.pi)
_EMPTY_RESP = 1e-8


class GmmError(ValueError):
    """Raised for invalid GMM inputs."""


def _as_array(frames) -> np.ndarray:
    data = getattr(frames, "data", frames)
    return np.asarray(data, dtype=np.float64)


@dataclass
class GmmModel:
    """Mixture weights, means, and per-dimension variances."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihoods: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise GmmError(f"weights sum to {self.weights.sum()}, expected 1")
        if np.any(self.variances <= 0):
            raise GmmError("variances must be positive")

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_densities(self, x: np.ndarray) -> np.ndarray:
        """log[w_c * N(x; mu_c, Sigma_c)] for each frame/component pair."""
        x = _as_array(x)
        inv_var = 1.0 / self.variances
        quad = (
            (x**2) @ inv_var.T
            - 2.0 * x @ (self.means * inv_var).T
            + np.sum(self.means**2 * inv_var, axis=1)[None, :]
        )
        log_norm = -0.5 * (self.dim * _LOG_2PI + np.sum(np.log(self.variances), axis=1))
        return np.log(self.weights)[None, :] + log_norm[None, :] - 0.5 * quad

    def log_responsibilities(self, x: np.ndarray) -> np.ndarray:
        """Posterior log P(c | x) per frame, log-sum-exp stabilised."""
        log_d = self.log_densities(x)
        norm = _logsumexp(log_d)
        return log_d - norm[:, None]

    def log_likelihood(self, x: np.ndarray) -> float:
        return float(np.sum(_logsumexp(self.log_densities(x))))


@dataclass
class BaumWelchStats:
    """Zero-order counts and centered first-order stats for one utterance."""

    n: np.ndarray  # (C,)
    f: np.ndarray  # (C, dim), centered on UBM means

    @property
    def f_norm(self) -> np.ndarray:
        """Per-component normalised means F_c / N_c (zero where N_c = 0)."""
        out = np.zeros_like(self.f)
        nonzero = self.n > 0
        out[nonzero] = self.f[nonzero] / self.n[nonzero, None]
        return out


def _logsumexp(log_values: np.ndarray) -> np.ndarray:
    peak = np.max(log_values, axis=1)
    return peak + np.log(np.sum(np.exp(log_values - peak[:, None]), axis=1))


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator, iters: int = 10) -> np.ndarray:
    """Seeded k-means++ centers refined with a few Lloyd iterations."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    dist2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        probs = dist2 / dist2.sum() if dist2.sum() > 0 else np.full(n, 1.0 / n)
        centers[j] = x[rng.choice(n, p=probs)]
        dist2 = np.minimum(dist2, np.sum((x - centers[j]) ** 2, axis=1))
    for _ in range(iters):
        d2 = (
            np.sum(x**2, axis=1)[:, None]
            - 2.0 * x @ centers.T
            + np.sum(centers**2, axis=1)[None, :]
        )
        assign = np.argmin(d2, axis=1)
        for j in range(k):
            members = x[assign == j]
            if len(members) == 0:
                # farthest point from its center restarts the empty cluster
                centers[j] = x[np.argmax(np.min(d2, axis=1))]
            else:
                centers[j] = members.mean(axis=0)
    return centers


def train_gmm(
    frames,
    n_components: int,
    iters: int = 20,
    var_floor: float = 1e-3,
    seed: int = 0,
    kmeans_iters: int = 10,
) -> GmmModel:
    """Fit a diagonal GMM by EM from a seeded k-means++ start.

    Variances are floored at var_floor times the global per-dimension
    variance; a component whose total responsibility collapses is
    reinitialised at the lowest-likelihood frame. The per-iteration total
    log-likelihood trace is kept on the returned model.
    """
    x = _as_array(frames)
    if not np.all(np.isfinite(x)):
        raise GmmError("training frames contain non-finite values")
    if n_components < 1:
        raise GmmError("need at least one component")
    if x.shape[0] < 10 * n_components:
        raise GmmError(f"too few frames: {x.shape[0]} < 10 * {n_components}")

    rng = np.random.default_rng(seed)
    global_var = np.maximum(x.var(axis=0), 1e-12)
    floor = var_floor * global_var

    centers = _kmeans_pp(x, n_components, rng, iters=kmeans_iters)
    d2 = (
        np.sum(x**2, axis=1)[:, None]
        - 2.0 * x @ centers.T
        + np.sum(centers**2, axis=1)[None, :]
    )
    assign = np.argmin(d2, axis=1)
    weights = np.maximum(np.bincount(assign, minlength=n_components), 1).astype(np.float64)
    weights /= weights.sum()
    variances = np.empty_like(centers)
    for j in range(n_components):
        members = x[assign == j]
        variances[j] = members.var(axis=0) if len(members) > 1 else global_var
    variances = np.maximum(variances, floor)

    model = GmmModel(weights, centers, variances)
    trace = []
    for _ in range(iters):
        log_d = model.log_densities(x)
        norm = _logsumexp(log_d)
        trace.append(float(norm.sum()))
        resp = np.exp(log_d - norm[:, None])
        counts = resp.sum(axis=0)
        dead = counts < _EMPTY_RESP
        if np.any(dead):
            worst = np.argsort(norm)  # lowest-likelihood frames first
            for rank, j in enumerate(np.flatnonzero(dead)):
                resp[:, j] = 0.0
                resp[worst[rank % len(worst)], j] = 1.0
            counts = resp.sum(axis=0)
        weights = counts / counts.sum()
        means = (resp.T @ x) / counts[:, None]
        sq = (resp.T @ (x**2)) / counts[:, None]
        variances = np.maximum(sq - means**2, floor)
        model = GmmModel(weights, means, variances)
    model.log_likelihoods = trace
    return model


def accumulate_stats(frames, ubm: GmmModel) -> BaumWelchStats:
    """Zero- and centered first-order Baum-Welch statistics on the UBM.

    N_c sums the occupancy posteriors over frames; F_c sums the
    posterior-weighted residuals against the UBM component means.
    """
    x = _as_array(frames)
    if x.shape[1] != ubm.dim:
        raise GmmError(f"frame dim {x.shape[1]} != UBM dim {ubm.dim}")
    resp = np.exp(ubm.log_responsibilities(x))
    n = resp.sum(axis=0)
    f = resp.T @ x - n[:, None] * ubm.means
    return BaumWelchStats(n, f)
