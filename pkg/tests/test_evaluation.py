import numpy as np
import pytest

from antispoof import (
    EvalError,
    FusionWeights,
    ScoreSet,
    Trial,
    TrialSet,
    compute_eer,
    det_points,
    fuse_scores,
    leave_one_spoof_out,
    tune_weights,
)


def make_trials(n_human, n_spoof, spoof_type="S1", split="dev"):
    entries = [Trial(f"h{i}", "human", "none", split) for i in range(n_human)]
    entries += [Trial(f"s{i}", "spoof", spoof_type, split) for i in range(n_spoof)]
    return TrialSet(entries)


def scores_from(human, spoof, system="sys"):
    d = {f"h{i}": v for i, v in enumerate(human)}
    d.update({f"s{i}": v for i, v in enumerate(spoof)})
    return ScoreSet(system, d)


def brute_force_eer(human, spoof):
    """O(n^2) sweep implementing the stated definition directly."""
    human = np.asarray(human)
    spoof = np.asarray(spoof)
    thresholds = sorted(set(human.tolist() + spoof.tolist()))
    ops = []
    for t in thresholds:
        frr = sum(1 for h in human if h < t) / len(human)
        far = sum(1 for s in spoof if s >= t) / len(spoof)
        ops.append((far, frr))
    ops.append((0.0, 1.0))
    for k, (far, frr) in enumerate(ops):
        if far == frr:
            return far
        if far < frr:
            far0, frr0 = ops[k - 1]
            t = (far0 - frr0) / ((far0 - frr0) - (far - frr))
            return frr0 + t * (frr - frr0)
    raise AssertionError("no crossing found")


def test_eer_perfect_separation():
    trials = make_trials(2, 2)
    assert compute_eer(scores_from([0.9, 0.8], [0.1, 0.2]), trials) == 0.0


def test_eer_chance():
    trials = make_trials(2, 2)
    assert compute_eer(scores_from([0.3, 0.7], [0.3, 0.7]), trials) == 0.5


def test_eer_one_third():
    trials = make_trials(3, 3)
    eer = compute_eer(scores_from([0.8, 0.6, 0.4], [0.5, 0.3, 0.1]), trials)
    assert abs(eer - 1.0 / 3.0) < 1e-12


def test_eer_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n_h = int(rng.integers(3, 40))
        n_s = int(rng.integers(3, 40))
        human = rng.standard_normal(n_h) + rng.uniform(0, 2)
        spoof = rng.standard_normal(n_s)
        trials = make_trials(n_h, n_s)
        fast = compute_eer(scores_from(human, spoof), trials)
        slow = brute_force_eer(human, spoof)
        assert abs(fast - slow) <= 1e-12


def test_eer_invariant_under_monotone_transform():
    rng = np.random.default_rng(1)
    human = rng.standard_normal(25) + 0.8
    spoof = rng.standard_normal(30)
    trials = make_trials(25, 30)
    base = compute_eer(scores_from(human, spoof), trials)
    for transform in (lambda v: 3.0 * v + 7.0, np.tanh, lambda v: np.exp(v / 4.0)):
        eer = compute_eer(scores_from(transform(human), transform(spoof)), trials)
        assert eer == base


def test_eer_spoof_type_filter():
    entries = [Trial("h0", "human", "none", "dev"), Trial("h1", "human", "none", "dev"),
               Trial("a0", "spoof", "S1", "dev"), Trial("b0", "spoof", "S2", "dev")]
    trials = TrialSet(entries)
    scores = ScoreSet("x", {"h0": 0.9, "h1": 0.8, "a0": 0.85, "b0": 0.1})
    assert compute_eer(scores, trials, spoof_type="S2") == 0.0
    assert compute_eer(scores, trials, spoof_type="S1") == 0.5
    # a spoof outscoring every human saturates past chance (range is [0, 0.5+])
    reversed_scores = ScoreSet("x", {"h0": 0.9, "h1": 0.8, "a0": 0.95, "b0": 0.1})
    assert compute_eer(reversed_scores, trials, spoof_type="S1") == 1.0


def test_eer_single_class_errors():
    trials = TrialSet([Trial("h0", "human", "none", "dev")])
    with pytest.raises(EvalError, match="both"):
        compute_eer(ScoreSet("x", {"h0": 1.0}), trials)


# ---------------------------------------------------------------------------
# DET points


def test_det_three_points_for_one_of_each():
    trials = make_trials(1, 1)
    pts = det_points(scores_from([1.0], [0.0]), trials)
    assert pts == [(1.0, 0.0), (0.0, 0.0), (0.0, 1.0)]


def test_det_endpoints_and_monotonicity():
    rng = np.random.default_rng(2)
    human = rng.standard_normal(30) + 1
    spoof = rng.standard_normal(40)
    pts = det_points(scores_from(human, spoof), make_trials(30, 40))
    far = np.array([p[0] for p in pts])
    frr = np.array([p[1] for p in pts])
    assert pts[0] == (1.0, 0.0)
    assert pts[-1] == (0.0, 1.0)
    assert np.all(np.diff(far) <= 0)
    assert np.all(np.diff(frr) >= 0)


def test_det_points_match_confusion_count_oracle():
    rng = np.random.default_rng(3)
    human = rng.standard_normal(100)
    spoof = rng.standard_normal(100) - 0.5
    pts = det_points(scores_from(human, spoof), make_trials(100, 100))
    thresholds = sorted(set(human.tolist() + spoof.tolist()))
    expected = []
    for t in thresholds:
        frr = sum(1 for h in human if h < t) / 100.0
        far = sum(1 for s in spoof if s >= t) / 100.0
        expected.append((far, frr))
    expected.append((0.0, 1.0))
    assert len(pts) == len(expected)
    for (fa, fb), (ea, eb) in zip(pts, expected):
        assert fa == ea and fb == eb


def test_perfect_separation_passes_through_origin():
    pts = det_points(scores_from([0.9, 0.8], [0.1, 0.2]), make_trials(2, 2))
    assert (0.0, 0.0) in pts


# ---------------------------------------------------------------------------
# fusion


def test_fuse_identity_weights_preserve_eer():
    rng = np.random.default_rng(4)
    trials = make_trials(20, 20)
    a = scores_from(rng.standard_normal(20) + 1.0, rng.standard_normal(20), "a")
    b = scores_from(rng.standard_normal(20), rng.standard_normal(20), "b")
    for i, system in enumerate([a, b]):
        w = np.zeros(2)
        w[i] = 1.0
        fused = fuse_scores([a, b], FusionWeights(w), normalize=True)
        assert compute_eer(fused, trials) == compute_eer(system, trials)


def test_fuse_duplicate_systems_unchanged():
    rng = np.random.default_rng(5)
    trials = make_trials(15, 15)
    a = scores_from(rng.standard_normal(15) + 1.0, rng.standard_normal(15), "a")
    b = ScoreSet("b", dict(a.scores))
    base = compute_eer(a, trials)
    for w in ([0.5, 0.5], [0.2, 0.8], [1.0, 0.0]):
        fused = fuse_scores([a, b], FusionWeights(np.array(w)))
        assert compute_eer(fused, trials) == base


def test_fuse_coverage_mismatch_lists_ids():
    a = ScoreSet("a", {"u1": 0.5, "u2": 0.1})
    b = ScoreSet("b", {"u1": 0.5})
    with pytest.raises(EvalError, match="u2"):
        fuse_scores([a, b], FusionWeights(np.array([0.5, 0.5])))


def test_complementary_errors_fuse_below_both():
    # two systems with disjoint error sets: some mixture beats both
    n = 40
    rng = np.random.default_rng(6)
    human_a = np.full(n, 1.0)
    human_a[:4] = -1.0  # system a rejects 4 humans
    spoof_a = np.full(n, -1.0) + rng.uniform(-0.01, 0.01, n)
    human_b = np.full(n, 1.0)
    human_b[4:8] = -1.0  # system b rejects 4 different humans
    spoof_b = np.full(n, -1.0) + rng.uniform(-0.01, 0.01, n)
    trials = make_trials(n, n)
    a = scores_from(human_a, spoof_a, "a")
    b = scores_from(human_b, spoof_b, "b")
    eer_a = compute_eer(a, trials)
    eer_b = compute_eer(b, trials)
    weights = tune_weights([a, b], trials, grid_step=0.05)
    fused = fuse_scores([a, b], weights)
    assert compute_eer(fused, trials) < min(eer_a, eer_b)


def test_tune_weights_prefers_dominant_system():
    # the good system separates by a razor margin, so any real admixture of
    # the chance-level system destroys it; without z-norm the tie-break
    # cannot drift the weight away from the only minimiser
    rng = np.random.default_rng(7)
    n = 30
    trials = make_trials(n, n)
    good = scores_from(np.full(n, 1e-3), np.full(n, -1e-3), "good")
    noise = scores_from(rng.standard_normal(n), rng.standard_normal(n), "noise")
    assert compute_eer(good, trials) == 0.0
    assert abs(compute_eer(noise, trials) - 0.5) < 0.15
    weights = tune_weights([good, noise], trials, grid_step=0.05, normalize=False)
    assert weights.weights[0] >= 0.9


def test_tune_weights_tie_break_uniform():
    rng = np.random.default_rng(8)
    n = 20
    trials = make_trials(n, n)
    a = scores_from(rng.standard_normal(n) + 2, rng.standard_normal(n), "a")
    b = ScoreSet("b", dict(a.scores))
    weights = tune_weights([a, b], trials, grid_step=0.05)
    assert np.allclose(weights.weights, [0.5, 0.5])


def test_tune_weights_degenerate_grid_returns_best_single():
    rng = np.random.default_rng(9)
    n = 25
    trials = make_trials(n, n)
    good = scores_from(np.ones(n), -np.ones(n), "good")
    bad = scores_from(rng.standard_normal(n), rng.standard_normal(n), "bad")
    weights = tune_weights([bad, good], trials, grid_step=1.0)
    assert np.allclose(weights.weights, [0.0, 1.0])


def test_fusion_weights_invariants():
    with pytest.raises(EvalError):
        FusionWeights(np.array([0.5, 0.6]))
    with pytest.raises(EvalError):
        FusionWeights(np.array([-0.1, 1.1]))


# ---------------------------------------------------------------------------
# leave-one-spoof-out protocol


def loso_trials(n_types=5, per_type=10, n_human=20):
    entries = [Trial(f"h{i}", "human", "none", "train") for i in range(n_human)]
    for t in range(1, n_types + 1):
        entries += [Trial(f"s{t}_{i}", "spoof", f"S{t}", "train") for i in range(per_type)]
    return TrialSet(entries)


def test_loso_fold_count_and_partition():
    trials = loso_trials(5)
    folds = leave_one_spoof_out(trials, seed=1)
    assert len(folds) == 5
    held = [f.held_out_type for f in folds]
    assert sorted(held) == ["S1", "S2", "S3", "S4", "S5"]
    for fold in folds:
        train_types = {e.spoof_type for e in fold.train.entries if e.label == "spoof"}
        test_types = {e.spoof_type for e in fold.test.entries if e.label == "spoof"}
        assert test_types == {fold.held_out_type}
        assert fold.held_out_type not in train_types
        assert len(train_types) == 4


def test_loso_two_types_complete_test_sets():
    trials = loso_trials(2, per_type=10)
    folds = leave_one_spoof_out(trials, seed=0)
    for fold in folds:
        spoof_test = [e for e in fold.test.entries if e.label == "spoof"]
        assert len(spoof_test) == 10


def test_loso_humans_disjoint():
    trials = loso_trials(3)
    for fold in leave_one_spoof_out(trials, seed=2):
        train_h = {e.utterance_id for e in fold.train.entries if e.label == "human"}
        test_h = {e.utterance_id for e in fold.test.entries if e.label == "human"}
        assert not (train_h & test_h)
        assert len(train_h) + len(test_h) == 20


def test_loso_empty_type_skipped_with_warning():
    trials = loso_trials(2)
    with pytest.warns(UserWarning, match="S9"):
        folds = leave_one_spoof_out(trials, spoof_types=["S1", "S2", "S9"], seed=0)
    assert len(folds) == 2


def test_loso_single_type_errors():
    trials = loso_trials(1)
    with pytest.raises(EvalError, match="two spoof types"):
        leave_one_spoof_out(trials, seed=0)


# ---------------------------------------------------------------------------
# trial containers


def test_trialset_rejects_duplicates_and_untyped_spoofs():
    with pytest.raises(EvalError, match="duplicate"):
        TrialSet([Trial("u", "human", "none", "dev"), Trial("u", "human", "none", "dev")])
    with pytest.raises(EvalError, match="spoof type"):
        TrialSet([Trial("u", "spoof", "none", "dev")])


def test_scoreset_rejects_non_finite():
    with pytest.raises(EvalError, match="non-finite"):
        ScoreSet("x", {"u": float("nan")})


def test_subset_filters():
    entries = [Trial("h", "human", "none", "dev"), Trial("s1", "spoof", "S1", "dev"),
               Trial("s2", "spoof", "S2", "eval")]
    trials = TrialSet(entries)
    assert {e.utterance_id for e in trials.subset(split="dev").entries} == {"h", "s1"}
    sub = trials.subset(spoof_type="S2")
    assert {e.utterance_id for e in sub.entries} == {"h", "s2"}
