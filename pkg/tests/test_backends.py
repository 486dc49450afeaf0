import math

import numpy as np
import pytest

from antispoof import (
    BackendError,
    CosineReference,
    KnnModel,
    PldaModel,
    PldaScorer,
    SvmKernel,
    apply_minmax,
    cosine_score,
    fit_cosine,
    fit_minmax,
    fit_plda,
    fit_svm,
    knn_score,
    length_normalize,
    plda_score,
    svm_score,
)


# ---------------------------------------------------------------------------
# min/max scaling


def test_minmax_midpoint_maps_to_zero():
    s = fit_minmax(np.array([[2.0], [4.0]]))
    assert apply_minmax(np.array([3.0]), s)[0] == 0.0


def test_minmax_no_clamping():
    s = fit_minmax(np.array([[2.0], [4.0]]))
    assert apply_minmax(np.array([5.0]), s)[0] == 2.0


def test_minmax_constant_dim_maps_to_zero():
    s = fit_minmax(np.array([[1.0], [1.0]]))
    assert apply_minmax(np.array([17.0]), s)[0] == 0.0


def test_minmax_training_data_lands_in_unit_box():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((40, 6)) * rng.random(6) * 10
    s = fit_minmax(x)
    mapped = apply_minmax(x, s)
    assert mapped.min() >= -1.0 and mapped.max() <= 1.0
    assert np.allclose(mapped.min(axis=0), -1.0)
    assert np.allclose(mapped.max(axis=0), 1.0)


# ---------------------------------------------------------------------------
# cosine


def test_cosine_examples():
    ref = CosineReference(np.array([1.0, 1.0]))
    assert abs(cosine_score(np.array([1.0, 1.0]), ref) - 1.0) < 1e-12
    assert abs(cosine_score(np.array([1.0, -1.0]), ref)) < 1e-12
    assert abs(cosine_score(np.array([1.0, 0.0]), ref) - 1.0 / math.sqrt(2)) < 1e-9


def test_cosine_scale_invariance():
    rng = np.random.default_rng(1)
    ref = fit_cosine(rng.standard_normal((10, 4)))
    x = rng.standard_normal(4)
    assert cosine_score(x, ref) == cosine_score(123.0 * x, ref)


def test_cosine_zero_vector_errors():
    ref = CosineReference(np.array([1.0, 0.0]))
    with pytest.raises(BackendError, match="zero"):
        cosine_score(np.zeros(2), ref)
    with pytest.raises(BackendError, match="zero"):
        CosineReference(np.zeros(3))


# ---------------------------------------------------------------------------
# KNN


def test_knn_exact_match_examples():
    x = np.array([[0.0, 0.0], [10.0, 10.0]])
    m = KnnModel(x, np.array([True, False]), k=1)
    assert knn_score(np.array([0.0, 0.0]), m) == 1.0
    assert knn_score(np.array([10.0, 10.0]), m) == 0.0


def test_knn_two_thirds():
    x = np.array([[0.0], [1.0], [2.0], [50.0]])
    labels = np.array([True, True, False, False])
    m = KnnModel(x, labels, k=3)
    assert knn_score(np.array([0.5]), m) == pytest.approx(2.0 / 3.0)


def test_knn_stable_tie_break():
    # two points at the same distance: earlier insertion wins
    x = np.array([[1.0], [-1.0], [5.0]])
    m = KnnModel(x, np.array([True, False, False]), k=1)
    assert knn_score(np.array([0.0]), m) == 1.0
    m2 = KnnModel(x[[1, 0, 2]], np.array([False, True, False]), k=1)
    assert knn_score(np.array([0.0]), m2) == 0.0


def test_knn_rigid_motion_invariance():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((30, 4))
    labels = rng.random(30) > 0.5
    labels[:2] = [True, False]
    m = KnnModel(x, labels, k=5)
    rot = np.linalg.qr(rng.standard_normal((4, 4)))[0]
    shift = rng.standard_normal(4) * 10
    m2 = KnnModel(x @ rot + shift, labels, k=5)
    for _ in range(10):
        q = rng.standard_normal(4)
        assert abs(knn_score(q, m) - knn_score(q @ rot + shift, m2)) < 1e-9


def test_knn_k_bounds():
    x = np.zeros((3, 2))
    with pytest.raises(BackendError):
        KnnModel(x, np.array([True, False, True]), k=4)
    with pytest.raises(BackendError):
        KnnModel(x, np.array([True, False, True]), k=0)


# ---------------------------------------------------------------------------
# PLDA


def test_plda_scalar_llr_closed_form():
    """1-D model V=[[1]], residual var 1: LLR against the hand formula."""
    model = PldaModel(np.zeros(1), np.array([[1.0]]), np.zeros((1, 0)), np.array([1.0]),
                      length_norm=False)
    for a, b in [(0.7, -0.3), (1.2, 1.1), (0.0, 2.0)]:
        llr = plda_score(np.array([a]), model, np.array([[b]]))
        # C_same = [[2,1],[1,2]], C_diff = diag(2,2)
        q_same = (2 * a * a - 2 * a * b + 2 * b * b) / 3.0
        log_same = -0.5 * q_same - 0.5 * math.log((2 * math.pi) ** 2 * 3.0)
        log_a = -0.5 * (a * a / 2.0) - 0.5 * math.log(2 * math.pi * 2.0)
        log_b = -0.5 * (b * b / 2.0) - 0.5 * math.log(2 * math.pi * 2.0)
        assert abs(llr - (log_same - log_a - log_b)) < 1e-9


def test_plda_no_between_class_variance_gives_zero_llr():
    model = PldaModel(np.zeros(3), np.zeros((3, 0)), np.zeros((3, 0)),
                      np.ones(3), length_norm=False)
    rng = np.random.default_rng(3)
    enroll = rng.standard_normal((5, 3))
    for _ in range(5):
        assert abs(plda_score(rng.standard_normal(3), model, enroll)) < 1e-9


def test_plda_directional_sanity():
    model = PldaModel(np.zeros(2), np.array([[1.0], [0.5]]), np.zeros((2, 0)),
                      np.full(2, 1e-4), length_norm=False)
    enroll = np.array([[2.0, 1.0]])
    close = plda_score(np.array([2.0, 1.0]), model, enroll)
    far = plda_score(np.array([-2.0, -1.0]), model, enroll)
    assert close > 0
    assert close > far


def generate_plda_data(rng, n_classes=50, per_class=10, dim=20, r_v=4, noise=1.0):
    v_true = np.linalg.qr(rng.standard_normal((dim, r_v)))[0] * 3.0
    xs, labels = [], []
    for c in range(n_classes):
        h = rng.standard_normal(r_v)
        xs.append(v_true @ h + rng.standard_normal((per_class, dim)) * noise)
        labels += [c] * per_class
    return np.vstack(xs), np.array(labels), v_true


def test_plda_subspace_recovery():
    from scipy.linalg import subspace_angles

    rng = np.random.default_rng(4)
    x, labels, v_true = generate_plda_data(rng)
    model = fit_plda(x, labels, r_v=4, iters=50, length_norm=False, seed=0)
    angles = subspace_angles(v_true, model.v)
    assert np.degrees(angles).max() < 15.0


def test_plda_em_objective_monotone():
    rng = np.random.default_rng(5)
    for trial in range(3):
        x, labels, _ = generate_plda_data(rng, n_classes=12, per_class=6, dim=8, r_v=2)
        model = fit_plda(x, labels, r_v=2, iters=20, length_norm=False, seed=trial)
        assert np.all(np.diff(model.objectives) >= -1e-6)


def test_plda_two_subspace_monotone_and_shapes():
    rng = np.random.default_rng(6)
    n = 120
    speakers = rng.integers(0, 8, n)
    channels = rng.integers(0, 4, n)
    x = rng.standard_normal((n, 10))
    model = fit_plda(x, speakers, r_v=3, r_u=2, iters=15,
                     channel_labels=channels, length_norm=False, seed=1)
    assert model.v.shape == (10, 3)
    assert model.u.shape == (10, 2)
    assert np.all(np.diff(model.objectives) >= -1e-6)
    between, within = model.between_within()
    # two-subspace scoring: channel subspace is the shared one
    assert np.allclose(between, model.u @ model.u.T)


def test_plda_rank_and_label_errors():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((20, 4))
    labels = np.arange(20) % 2
    with pytest.raises(BackendError, match="r_v"):
        fit_plda(x, labels, r_v=3, r_u=1, iters=2)
    with pytest.raises(BackendError, match="channel"):
        fit_plda(x, labels, r_v=1, r_u=1, iters=2)
    with pytest.raises(BackendError, match="two classes"):
        fit_plda(x, np.zeros(20), r_v=1, iters=2)


def test_plda_length_norm_preprocess_roundtrip():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((60, 6)) + 4.0
    labels = np.arange(60) % 3
    model = fit_plda(x, labels, r_v=2, iters=10, length_norm=True, seed=0)
    pre = model.preprocess(x)
    norms = np.linalg.norm(pre + model.mean, axis=1)
    assert np.allclose(norms, 1.0, atol=1e-9)


def test_plda_scorer_vectorised_matches_scalar():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((80, 5))
    labels = np.arange(80) % 4
    model = fit_plda(x, labels, r_v=2, iters=8, length_norm=True, seed=0)
    enroll = x[:10]
    scorer = PldaScorer(model, human_enrollment=enroll)
    queries = rng.standard_normal((6, 5))
    batch = scorer.score(queries)
    singles = [plda_score(q, model, enroll) for q in queries]
    assert np.allclose(batch, singles, atol=1e-10)


# ---------------------------------------------------------------------------
# SVM


def test_svm_poly_degree_one_equals_linear():
    rng = np.random.default_rng(10)
    x = np.vstack([rng.standard_normal((30, 3)) + 2, rng.standard_normal((30, 3)) - 2])
    y = np.array([1.0] * 30 + [-1.0] * 30)
    linear = fit_svm(x, y, SvmKernel("linear"))
    poly1 = fit_svm(x, y, SvmKernel("poly", degree=1, gain=1.0, coef0=0.0))
    assert np.max(np.abs(svm_score(x, linear) - svm_score(x, poly1))) < 1e-6


def test_svm_xor_needs_degree_two():
    x = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    y = np.array([1.0, 1.0, -1.0, -1.0])
    deg1 = fit_svm(x, y, SvmKernel("poly", degree=1, gain=1.0, coef0=0.0))
    acc1 = np.mean(np.sign(svm_score(x, deg1)) == y)
    assert acc1 <= 0.75
    deg2 = fit_svm(x, y, SvmKernel("poly", degree=2))
    assert np.mean(np.sign(svm_score(x, deg2)) == y) == 1.0


def test_svm_degree_two_explicit_feature_map_oracle():
    """phi(x)'phi(y) must reproduce (x'y + r)^2 exactly."""

    def phi(x, r):
        feats = [x[i] * x[j] * (1.0 if i == j else math.sqrt(2.0))
                 for i in range(len(x)) for j in range(i, len(x))]
        feats += [math.sqrt(2.0 * r) * xi for xi in x]
        feats.append(r)
        return np.array(feats)

    rng = np.random.default_rng(11)
    kernel = SvmKernel("poly", degree=2, gain=1.0, coef0=1.5)
    for _ in range(20):
        a, b = rng.standard_normal(5), rng.standard_normal(5)
        direct = kernel(a[None, :], b[None, :])[0, 0]
        mapped = phi(a, 1.5) @ phi(b, 1.5)
        assert abs(direct - mapped) < 1e-9


def test_svm_dual_objective_monotone_and_kkt():
    rng = np.random.default_rng(12)
    for trial in range(5):
        x = rng.standard_normal((60, 4))
        y = np.sign(x[:, 0] + 0.3 * rng.standard_normal(60))
        y[y == 0] = 1.0
        model = fit_svm(x, y, SvmKernel("poly", degree=2, gain=0.25), c=1.0)
        assert np.all(np.diff(model.objectives) >= -1e-9)
        assert model.kkt_violation <= 1e-3


def test_svm_class_weighting_ratio():
    # per-class boxes follow C+/C- = n-/n+: the minority class gets more slack
    rng = np.random.default_rng(13)
    x = np.vstack([rng.standard_normal((10, 2)) + 1, rng.standard_normal((40, 2)) - 1])
    y = np.array([1.0] * 10 + [-1.0] * 40)
    model = fit_svm(x, y, SvmKernel("linear"), c=1.0)
    pos_alpha = model.dual_coef[model.dual_coef > 0]
    neg_alpha = -model.dual_coef[model.dual_coef < 0]
    # box bounds: C+ = 50/20 = 2.5, C- = 50/80 = 0.625
    assert pos_alpha.max() <= 2.5 + 1e-9
    assert neg_alpha.max() <= 0.625 + 1e-9
    assert pos_alpha.max() > 0.625  # the positive box is actually used


def test_svm_single_class_errors():
    rng = np.random.default_rng(14)
    with pytest.raises(BackendError, match="both classes"):
        fit_svm(rng.standard_normal((10, 2)), np.ones(10), SvmKernel("linear"))


def test_svm_higher_means_more_human():
    rng = np.random.default_rng(15)
    human = rng.standard_normal((25, 3)) + 3.0
    spoof = rng.standard_normal((25, 3)) - 3.0
    x = np.vstack([human, spoof])
    y = np.array([1.0] * 25 + [-1.0] * 25)
    model = fit_svm(x, y, SvmKernel("linear"))
    assert svm_score(human, model).mean() > svm_score(spoof, model).mean()


def test_all_scorers_follow_higher_is_more_human():
    """Directional test on a trivially separable set, for every back end."""
    rng = np.random.default_rng(16)
    human = rng.standard_normal((20, 4)) * 0.3 + np.array([3.0, 0, 0, 0])
    spoof = rng.standard_normal((20, 4)) * 0.3 - np.array([3.0, 0, 0, 0])
    x = np.vstack([human, spoof])
    labels_h = np.array([True] * 20 + [False] * 20)

    ref = fit_cosine(human)
    assert np.mean([cosine_score(v, ref) for v in human]) > np.mean(
        [cosine_score(v, ref) for v in spoof]
    )

    knn = KnnModel(x, labels_h, k=3)
    assert np.mean([knn_score(v, knn) for v in human]) > np.mean(
        [knn_score(v, knn) for v in spoof]
    )

    channels = np.array(["human"] * 20 + ["S1"] * 20)
    plda = fit_plda(x, channels, r_v=2, iters=10, seed=0)
    scorer = PldaScorer(plda, human_enrollment=human)
    assert scorer.score(human).mean() > scorer.score(spoof).mean()

    y = np.where(labels_h, 1.0, -1.0)
    svm = fit_svm(x, y, SvmKernel("poly", degree=2, gain=0.25))
    assert svm_score(human, svm).mean() > svm_score(spoof, svm).mean()


def test_length_normalize():
    rng = np.random.default_rng(17)
    x = rng.standard_normal((10, 4)) * 7
    normed = length_normalize(x)
    assert np.allclose(np.linalg.norm(normed, axis=1), 1.0)
    centered = length_normalize(x, center=x.mean(axis=0))
    assert np.allclose(np.linalg.norm(centered, axis=1), 1.0)
