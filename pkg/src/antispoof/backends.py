"""Classifier back ends: min/max scaling, cosine, KNN, PLDA, and SVM.

Every scorer follows one convention: higher score means more likely
human. Supervised back ends treat human as the positive class; the
one-class back ends score similarity to the human training population.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

_LOG_2PI = np.log(2.0 * np.pi)


class BackendError(ValueError):
    """Raised for invalid back-end inputs."""


def length_normalize(x: np.ndarray, center: np.ndarray | None = None) -> np.ndarray:
    """Project vectors onto the unit sphere, optionally centering first."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if center is not None:
        x = x - center
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, 1e-12)


# ---------------------------------------------------------------------------
# min/max normalisation


@dataclass
class MinMaxScaler:
    mins: np.ndarray
    maxs: np.ndarray


def fit_minmax(train: np.ndarray) -> MinMaxScaler:
    train = np.atleast_2d(np.asarray(train, dtype=np.float64))
    if train.size == 0:
        raise BackendError("empty training set")
    return MinMaxScaler(train.min(axis=0), train.max(axis=0))


def apply_minmax(v: np.ndarray, s: MinMaxScaler) -> np.ndarray:
    """Map to [-1, +1] using the training range; no clamping outside it.

    Dimensions that were constant in training map to 0.
    """
    v = np.asarray(v, dtype=np.float64)
    span = s.maxs - s.mins
    safe = np.where(span > 0, span, 1.0)
    out = 2.0 * (v - s.mins) / safe - 1.0
    return np.where(span > 0, out, 0.0)


# ---------------------------------------------------------------------------
# cosine scoring


@dataclass
class CosineReference:
    """Mean of the human-class training vectors."""

    mean: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        if np.linalg.norm(self.mean) == 0:
            raise BackendError("cosine reference has zero norm")


def fit_cosine(human_vectors: np.ndarray) -> CosineReference:
    human_vectors = np.atleast_2d(np.asarray(human_vectors, dtype=np.float64))
    if human_vectors.size == 0:
        raise BackendError("no human vectors to average")
    return CosineReference(human_vectors.mean(axis=0))


def cosine_score(x: np.ndarray, ref: CosineReference) -> float:
    x = np.asarray(x, dtype=np.float64)
    nx = np.linalg.norm(x)
    if nx == 0:
        raise BackendError("cannot cosine-score a zero vector")
    nm = np.linalg.norm(ref.mean)
    return float(x @ ref.mean / (nx * nm))


# ---------------------------------------------------------------------------
# k-nearest neighbours


@dataclass
class KnnModel:
    vectors: np.ndarray
    is_human: np.ndarray
    k: int = 5

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        self.is_human = np.asarray(self.is_human, dtype=bool)
        if self.k < 1:
            raise BackendError("k must be >= 1")
        if self.k > len(self.vectors):
            raise BackendError(f"k {self.k} exceeds training size {len(self.vectors)}")
        if len(self.is_human) != len(self.vectors):
            raise BackendError("label/vector count mismatch")


def knn_score(x: np.ndarray, m: KnnModel) -> float:
    """Fraction of human labels among the K nearest training vectors.

    Euclidean metric; distance ties resolve to earlier training entries
    (stable sort), so results do not depend on label layout.
    """
    d2 = np.sum((m.vectors - np.asarray(x, dtype=np.float64)) ** 2, axis=1)
    order = np.argsort(d2, kind="stable")
    return float(np.mean(m.is_human[order[: m.k]]))


# ---------------------------------------------------------------------------
# PLDA


@dataclass
class PldaModel:
    """Gaussian factor model x = mu + V h + U w + eps with diagonal eps.

    The simplified variant (u empty) uses one class subspace; the
    two-subspace variant adds a second factor grouped by a different
    label set (speaker subspace v, spoofing-channel subspace u). Scoring
    treats the channel subspace as the shared-class covariance:
    simplified -> between = V V', within = diag; two-subspace ->
    between = U U', within = V V' + diag.
    """

    mean: np.ndarray
    v: np.ndarray  # (dim, r_v)
    u: np.ndarray  # (dim, r_u), possibly zero columns
    psi: np.ndarray  # residual diagonal variances
    length_norm: bool = True
    raw_mean: np.ndarray | None = None  # pre-normalisation centering vector
    objectives: list = field(default_factory=list, repr=False)

    @property
    def dim(self) -> int:
        return len(self.mean)

    def preprocess(self, x: np.ndarray) -> np.ndarray:
        """Apply the training-time normalisation chain to raw vectors."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.length_norm:
            x = length_normalize(x, center=self.raw_mean)
        return x - self.mean

    def between_within(self) -> tuple[np.ndarray, np.ndarray]:
        if self.u.shape[1] > 0:
            return self.u @ self.u.T, self.v @ self.v.T + np.diag(self.psi)
        return self.v @ self.v.T, np.diag(self.psi)


def _plda_log_likelihood(xc, d_diag, prec, rhs, solved):
    n = xc.shape[0]
    quad_data = float(np.sum(xc**2 / d_diag))
    _, logdet_p = np.linalg.slogdet(prec)
    return (
        -0.5 * quad_data
        - 0.5 * n * float(np.sum(np.log(2.0 * np.pi * d_diag)))
        - 0.5 * logdet_p
        + 0.5 * float(rhs @ solved)
    )


def fit_plda(
    vectors: np.ndarray,
    class_labels,
    r_v: int,
    r_u: int = 0,
    iters: int = 20,
    channel_labels=None,
    length_norm: bool = True,
    seed: int = 0,
) -> PldaModel:
    """EM for the (optionally two-subspace) PLDA factor model.

    class_labels group the V factor; channel_labels (required when
    r_u > 0) group the U factor. The exact joint posterior over all class
    factors is used, so the traced observed-data log-likelihood is
    non-decreasing.
    """
    x = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    n, dim = x.shape
    if r_v + r_u >= dim:
        raise BackendError(f"r_v + r_u = {r_v + r_u} must be < dim {dim}")
    if r_u > 0 and channel_labels is None:
        raise BackendError("two-subspace PLDA needs channel_labels")
    labels_v = np.asarray(class_labels)
    if len(labels_v) != n:
        raise BackendError("label/vector count mismatch")
    if len(set(labels_v.tolist())) < 2:
        raise BackendError("need at least two classes")

    raw_mean = x.mean(axis=0)
    if length_norm:
        x = length_normalize(x, center=raw_mean)
    mean = x.mean(axis=0)
    xc = x - mean

    classes_v, idx_v = np.unique(labels_v, return_inverse=True)
    n_cls_v = len(classes_v)
    if r_u > 0:
        labels_u = np.asarray(channel_labels)
        classes_u, idx_u = np.unique(labels_u, return_inverse=True)
        n_cls_u = len(classes_u)
    else:
        idx_u = np.zeros(n, dtype=int)
        n_cls_u = 0

    rng = np.random.default_rng(seed)
    v = rng.standard_normal((dim, r_v)) * 0.1 if r_v > 0 else np.zeros((dim, 0))
    u = rng.standard_normal((dim, r_u)) * 0.1 if r_u > 0 else np.zeros((dim, 0))
    # relative floor keeps near-constant dimensions from wrecking conditioning
    var_floor = max(float(xc.var(axis=0).mean()), 1e-12) * 1e-8
    d_diag = np.maximum(xc.var(axis=0), var_floor)

    z_dim = n_cls_v * r_v + n_cls_u * r_u
    trace = []
    for _ in range(iters):
        d_inv = 1.0 / d_diag
        vdv = v.T @ (v * d_inv[:, None])  # (r_v, r_v)
        udu = u.T @ (u * d_inv[:, None]) if r_u > 0 else np.zeros((0, 0))
        vdu = v.T @ (u * d_inv[:, None]) if r_u > 0 else np.zeros((r_v, 0))

        prec = np.eye(z_dim)
        rhs = np.zeros(z_dim)
        counts_v = np.bincount(idx_v, minlength=n_cls_v)
        for s in range(n_cls_v):
            sl = slice(s * r_v, (s + 1) * r_v)
            prec[sl, sl] += counts_v[s] * vdv
        proj_v = xc @ (v * d_inv[:, None])  # (n, r_v)
        for s in range(n_cls_v):
            rhs[s * r_v : (s + 1) * r_v] = proj_v[idx_v == s].sum(axis=0)
        if r_u > 0:
            counts_u = np.bincount(idx_u, minlength=n_cls_u)
            base = n_cls_v * r_v
            for c in range(n_cls_u):
                sl = slice(base + c * r_u, base + (c + 1) * r_u)
                prec[sl, sl] += counts_u[c] * udu
            proj_u = xc @ (u * d_inv[:, None])
            for c in range(n_cls_u):
                rhs[base + c * r_u : base + (c + 1) * r_u] = proj_u[idx_u == c].sum(axis=0)
            cross = np.zeros((n_cls_v, n_cls_u))
            np.add.at(cross, (idx_v, idx_u), 1.0)
            for s in range(n_cls_v):
                for c in range(n_cls_u):
                    if cross[s, c]:
                        prec[
                            s * r_v : (s + 1) * r_v,
                            base + c * r_u : base + (c + 1) * r_u,
                        ] += cross[s, c] * vdu
            prec[base:, : base] = prec[:base, base:].T

        cov = np.linalg.inv(prec)
        post_mean = cov @ rhs
        trace.append(_plda_log_likelihood(xc, d_diag, prec, rhs, post_mean))

        # per-utterance factor moments
        r_tot = r_v + r_u
        eg = np.zeros((n, r_tot))
        egg = np.zeros((r_tot, r_tot))
        mean_v = post_mean[: n_cls_v * r_v].reshape(n_cls_v, r_v) if r_v else np.zeros((n_cls_v, 0))
        eg[:, :r_v] = mean_v[idx_v]
        if r_u > 0:
            base = n_cls_v * r_v
            mean_u = post_mean[base:].reshape(n_cls_u, r_u)
            eg[:, r_v:] = mean_u[idx_u]
        for i in range(n):
            s, c = idx_v[i], idx_u[i]
            sl_v = slice(s * r_v, (s + 1) * r_v)
            block = np.zeros((r_tot, r_tot))
            block[:r_v, :r_v] = cov[sl_v, sl_v]
            if r_u > 0:
                base = n_cls_v * r_v
                sl_u = slice(base + c * r_u, base + (c + 1) * r_u)
                block[r_v:, r_v:] = cov[sl_u, sl_u]
                block[:r_v, r_v:] = cov[sl_v, sl_u]
                block[r_v:, :r_v] = cov[sl_u, sl_v]
            egg += block + np.outer(eg[i], eg[i])

        xg = xc.T @ eg  # (dim, r_tot)
        if r_tot > 0:
            w_new = np.linalg.solve(egg.T, xg.T).T
        else:
            w_new = np.zeros((dim, 0))
        v = w_new[:, :r_v]
        u = w_new[:, r_v:]
        d_diag = np.maximum(
            (np.sum(xc**2, axis=0) - np.einsum("dr,dr->d", w_new, xg)) / n, var_floor
        )

    model = PldaModel(mean, v, u, d_diag, length_norm, raw_mean if length_norm else None)
    model.objectives = trace
    return model


class PldaScorer:
    """Precomputed verification-LLR machinery for one PLDA model."""

    def __init__(
        self,
        model: PldaModel,
        human_enrollment: np.ndarray | None = None,
        enrollment_mean: np.ndarray | None = None,
    ):
        self.model = model
        between, within = model.between_within()
        total = between + within
        ct = cho_factor(total)
        self.total_inv = cho_solve(ct, np.eye(model.dim))
        schur = total - between @ self.total_inv @ between
        cs = cho_factor(schur)
        self.g = cho_solve(cs, np.eye(model.dim))
        self.h = -self.g @ between @ self.total_inv
        _, logdet_total = np.linalg.slogdet(total)
        _, logdet_schur = np.linalg.slogdet(schur)
        self.const = 0.5 * (logdet_total - logdet_schur)
        if enrollment_mean is not None:
            self.enroll = np.asarray(enrollment_mean, dtype=np.float64)
        elif human_enrollment is not None:
            self.enroll = model.preprocess(human_enrollment).mean(axis=0)
        else:
            raise BackendError("need enrollment vectors or a precomputed enrollment mean")

    def score(self, x: np.ndarray) -> np.ndarray:
        """LLR of sharing the enrolled class, vectorised over rows of x."""
        xt = self.model.preprocess(x)
        if xt.shape[1] != self.model.dim:
            raise BackendError(f"vector dim {xt.shape[1]} != model dim {self.model.dim}")
        a_minus_g = self.total_inv - self.g
        qx = 0.5 * np.einsum("nd,de,ne->n", xt, a_minus_g, xt)
        qe = 0.5 * float(self.enroll @ a_minus_g @ self.enroll)
        cross = -xt @ (self.h @ self.enroll)
        return qx + qe + cross + self.const


def plda_score(x: np.ndarray, m: PldaModel, human_enrollment: np.ndarray) -> float:
    """Verification log-likelihood ratio of x against the human class."""
    return float(PldaScorer(m, human_enrollment).score(np.atleast_2d(x))[0])


# ---------------------------------------------------------------------------
# SVM (SMO dual solver)


@dataclass(frozen=True)
class SvmKernel:
    kind: str = "linear"  # linear | poly
    degree: int = 2
    gain: float = 1.0
    coef0: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "poly"):
            raise BackendError(f"unknown kernel {self.kind!r}")
        if self.kind == "poly" and self.degree < 1:
            raise BackendError("polynomial degree must be >= 1")

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        gram = np.atleast_2d(a) @ np.atleast_2d(b).T
        if self.kind == "linear":
            return gram
        return (self.gain * gram + self.coef0) ** self.degree


@dataclass
class SvmModel:
    kernel: SvmKernel
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i for the support vectors
    bias: float
    objectives: list = field(default_factory=list, repr=False)
    kkt_violation: float = float("nan")


def fit_svm(
    train: np.ndarray,
    labels: np.ndarray,
    kernel: SvmKernel = SvmKernel(),
    c: float = 1.0,
    tol: float = 1e-3,
    max_iter: int | None = None,
) -> SvmModel:
    """Soft-margin SVM trained by maximal-violating-pair SMO.

    labels are +1 (human) / -1 (spoof). Class imbalance is absorbed into
    per-class box constraints with C_pos / C_neg = n_neg / n_pos. The dual
    objective trace (maximisation form) is kept on the model; training
    stops when the KKT violation drops to tol.
    """
    x = np.atleast_2d(np.asarray(train, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64)
    if set(np.unique(y).tolist()) != {-1.0, 1.0}:
        raise BackendError("need both classes labelled +1/-1")
    n = len(y)
    n_pos = int(np.sum(y > 0))
    n_neg = n - n_pos
    c_box = np.where(y > 0, c * n / (2.0 * n_pos), c * n / (2.0 * n_neg))

    k_mat = kernel(x, x)
    q = k_mat * np.outer(y, y)
    alpha = np.zeros(n)
    grad = -np.ones(n)
    if max_iter is None:
        max_iter = max(100_000, 500 * n)

    objectives = []
    diag = np.diag(k_mat)
    violation = np.inf
    for it in range(max_iter):
        if it and it % 4096 == 0:
            grad = q @ alpha - 1.0  # kill accumulated rounding drift
        neg_yg = -y * grad
        up = ((y > 0) & (alpha < c_box)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c_box))
        if not up.any() or not low.any():
            violation = 0.0
            break
        i = np.flatnonzero(up)[np.argmax(neg_yg[up])]
        violation = neg_yg[i] - np.min(neg_yg[low])
        if violation <= tol:
            break
        # second-order working-set selection: maximise the gain of the pair
        cand = low & (neg_yg < neg_yg[i])
        diff = neg_yg[i] - neg_yg[cand]
        eta_cand = np.maximum(diag[i] + diag[cand] - 2.0 * k_mat[i, cand], 1e-12)
        j = np.flatnonzero(cand)[np.argmax(diff * diff / eta_cand)]
        eta = max(k_mat[i, i] + k_mat[j, j] - 2.0 * k_mat[i, j], 1e-12)
        # Platt update with E_k = y_k * grad_k, i.e. -neg_yg
        new_aj = alpha[j] + y[j] * (neg_yg[j] - neg_yg[i]) / eta
        if y[i] != y[j]:
            lo = max(0.0, alpha[j] - alpha[i])
            hi = min(c_box[j], c_box[i] + alpha[j] - alpha[i])
        else:
            lo = max(0.0, alpha[i] + alpha[j] - c_box[i])
            hi = min(c_box[j], alpha[i] + alpha[j])
        new_aj = min(max(new_aj, lo), hi)
        new_ai = alpha[i] + y[i] * y[j] * (alpha[j] - new_aj)
        grad += q[:, i] * (new_ai - alpha[i]) + q[:, j] * (new_aj - alpha[j])
        alpha[i], alpha[j] = new_ai, new_aj
        objectives.append(float(np.sum(alpha) - 0.5 * alpha @ (grad + 1.0)))
    else:
        warnings.warn(f"SMO hit the iteration cap with KKT violation {violation:.3g}")

    neg_yg = -y * grad
    up = ((y > 0) & (alpha < c_box)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c_box))
    m_up = np.max(neg_yg[up]) if up.any() else 0.0
    m_low = np.min(neg_yg[low]) if low.any() else 0.0
    bias = (m_up + m_low) / 2.0

    keep = alpha > 1e-12
    model = SvmModel(kernel, x[keep], (alpha * y)[keep], float(bias))
    model.objectives = objectives
    model.kkt_violation = float(max(violation, 0.0))
    return model


def svm_score(x: np.ndarray, m: SvmModel) -> np.ndarray | float:
    """Signed decision value; positive means human side of the margin."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    values = m.kernel(np.atleast_2d(x), m.support_vectors) @ m.dual_coef + m.bias
    return float(values[0]) if single else values
