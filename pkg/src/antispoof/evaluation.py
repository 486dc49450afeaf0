"""Trial bookkeeping, EER/DET computation, score fusion, and protocol folds.

Scores follow the pipeline-wide convention (higher = more human), so the
false-rejection rate at threshold t is the fraction of human scores
below t and the false-acceptance rate is the fraction of spoof scores at
or above t.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np

HUMAN = "human"
SPOOF = "spoof"


class EvalError(ValueError):
    """Raised for malformed trials or scores."""


@dataclass(frozen=True)
class Trial:
    utterance_id: str
    label: str  # human | spoof
    spoof_type: str  # none | S1..S10
    split: str  # train | dev | eval


@dataclass
class TrialSet:
    entries: list[Trial] = field(default_factory=list)

    def __post_init__(self):
        ids = [e.utterance_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise EvalError("duplicate utterance ids in trial set")
        for e in self.entries:
            if e.label == SPOOF and e.spoof_type in ("", "none"):
                raise EvalError(f"{e.utterance_id}: spoof trial without a spoof type")

    def __len__(self) -> int:
        return len(self.entries)

    def subset(self, split: str | None = None, spoof_type: str | None = None) -> "TrialSet":
        """Filter by split and/or spoof type; humans are always retained."""
        kept = []
        for e in self.entries:
            if split is not None and e.split != split:
                continue
            if spoof_type is not None and e.label == SPOOF and e.spoof_type != spoof_type:
                continue
            kept.append(e)
        return TrialSet(kept)

    def ids(self) -> list[str]:
        return [e.utterance_id for e in self.entries]

    def spoof_types(self) -> list[str]:
        return sorted({e.spoof_type for e in self.entries if e.label == SPOOF})


@dataclass
class ScoreSet:
    system_id: str
    scores: dict[str, float]

    def __post_init__(self):
        for utt, value in self.scores.items():
            if not np.isfinite(value):
                raise EvalError(f"{self.system_id}: non-finite score for {utt}")


def _split_scores(scores: ScoreSet, trials: TrialSet, spoof_type: str | None):
    subset = trials.subset(spoof_type=spoof_type) if spoof_type else trials
    human, spoof = [], []
    for e in subset.entries:
        if e.utterance_id not in scores.scores:
            raise EvalError(f"{scores.system_id}: missing score for {e.utterance_id}")
        (human if e.label == HUMAN else spoof).append(scores.scores[e.utterance_id])
    if not human or not spoof:
        raise EvalError("need both human and spoof trials to evaluate")
    return np.asarray(human), np.asarray(spoof)


def _rates(human: np.ndarray, spoof: np.ndarray):
    """FRR/FAR at thresholds on every distinct score plus one above max."""
    human = np.sort(human)
    spoof = np.sort(spoof)
    thresholds = np.unique(np.concatenate([human, spoof]))
    frr = np.searchsorted(human, thresholds, side="left") / len(human)
    far = (len(spoof) - np.searchsorted(spoof, thresholds, side="left")) / len(spoof)
    frr = np.append(frr, 1.0)
    far = np.append(far, 0.0)
    return far, frr


def det_points(scores: ScoreSet, trials: TrialSet) -> list[tuple[float, float]]:
    """(FAR, FRR) staircase over thresholds at every distinct score.

    The first point is exactly (1, 0) and the last exactly (0, 1) thanks
    to a sentinel threshold above the maximum score.
    """
    human, spoof = _split_scores(scores, trials, None)
    far, frr = _rates(human, spoof)
    return list(zip(far.tolist(), frr.tolist()))


def compute_eer(scores: ScoreSet, trials: TrialSet, spoof_type: str | None = None) -> float:
    """Equal error rate with linear interpolation across the crossing.

    Thresholds sweep the distinct observed scores; the EER is read off
    where the FAR-FRR difference changes sign, interpolating linearly
    between the two bracketing operating points.
    """
    human, spoof = _split_scores(scores, trials, spoof_type)
    far, frr = _rates(human, spoof)
    return eer_from_rates(far, frr)


def eer_from_rates(far: np.ndarray, frr: np.ndarray) -> float:
    """Crossing of paired (FAR, FRR) operating points along the sweep."""
    diff = far - frr
    k = int(np.argmax(diff <= 0.0))  # diff starts at +1, must cross
    if diff[k] == 0.0:
        return float(far[k])
    if k == 0:
        return float((far[0] + frr[0]) / 2.0)
    t = diff[k - 1] / (diff[k - 1] - diff[k])
    return float(frr[k - 1] + t * (frr[k] - frr[k - 1]))


@dataclass
class FusionWeights:
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if np.any(self.weights < 0):
            raise EvalError("fusion weights must be non-negative")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise EvalError(f"fusion weights sum to {self.weights.sum()}, expected 1")


def _znorm(values: np.ndarray) -> np.ndarray:
    std = values.std()
    return (values - values.mean()) / (std if std > 0 else 1.0)


def fuse_scores(
    systems: list[ScoreSet], w: FusionWeights, normalize: bool = True, system_id: str = "fusion"
) -> ScoreSet:
    """Weighted score sum, optionally z-normalising each system first.

    Normalisation statistics come from the utterances being fused. All
    systems must cover exactly the same utterances.
    """
    if len(systems) != len(w.weights):
        raise EvalError(f"{len(systems)} systems vs {len(w.weights)} weights")
    ids = sorted(systems[0].scores)
    for s in systems[1:]:
        missing = set(ids) ^ set(s.scores)
        if missing:
            raise EvalError(
                f"score coverage mismatch between {systems[0].system_id} and "
                f"{s.system_id}: {sorted(missing)[:10]}"
            )
    fused = np.zeros(len(ids))
    for s, weight in zip(systems, w.weights):
        values = np.array([s.scores[i] for i in ids])
        if normalize:
            values = _znorm(values)
        fused += weight * values
    return ScoreSet(system_id, dict(zip(ids, fused.tolist())))


def _simplex_grid(n_systems: int, step: float):
    total = int(round(1.0 / step))
    if abs(total * step - 1.0) > 1e-9:
        raise EvalError(f"grid step {step} does not divide 1")

    def compositions(parts: int, remaining: int):
        if parts == 1:
            yield (remaining,)
            return
        for first in range(remaining + 1):
            for rest in compositions(parts - 1, remaining - first):
                yield (first, *rest)

    for combo in compositions(n_systems, total):
        yield np.array(combo, dtype=np.float64) / total


def tune_weights(
    systems: list[ScoreSet],
    dev_trials: TrialSet,
    grid_step: float = 0.05,
    normalize: bool = True,
) -> FusionWeights:
    """Exhaustive simplex grid search minimising development EER.

    Ties go to the most uniform weight vector (maximum entropy), then to
    the lexicographically smallest one.
    """
    if len(systems) < 2:
        raise EvalError("need at least two systems to fuse")
    ids = sorted(systems[0].scores)
    matrix = np.empty((len(systems), len(ids)))
    for row, s in enumerate(systems):
        missing = set(ids) ^ set(s.scores)
        if missing:
            raise EvalError(f"score coverage mismatch at {s.system_id}: {sorted(missing)[:10]}")
        values = np.array([s.scores[i] for i in ids])
        matrix[row] = _znorm(values) if normalize else values
    col = {utt: i for i, utt in enumerate(ids)}
    try:
        human_cols = [col[e.utterance_id] for e in dev_trials.entries if e.label == HUMAN]
        spoof_cols = [col[e.utterance_id] for e in dev_trials.entries if e.label == SPOOF]
    except KeyError as exc:
        raise EvalError(f"missing score for trial {exc}") from exc
    if not human_cols or not spoof_cols:
        raise EvalError("need both human and spoof trials to tune weights")

    best = None
    for weights in _simplex_grid(len(systems), grid_step):
        fused = weights @ matrix
        eer = eer_from_rates(*_rates(fused[human_cols], fused[spoof_cols]))
        nonzero = weights[weights > 0]
        entropy = float(-np.sum(nonzero * np.log(nonzero)))
        key = (eer, -entropy, tuple(weights))
        if best is None or key < best[0]:
            best = (key, weights)
    return FusionWeights(best[1])


@dataclass(frozen=True)
class ProtocolFold:
    held_out_type: str
    train: TrialSet
    test: TrialSet


def leave_one_spoof_out(trials: TrialSet, spoof_types: list[str] | None = None, seed: int = 0):
    """One fold per spoof type: hold that type out of training.

    Each fold trains on the humans' first (seeded, shuffled) half plus all
    other spoof types, and tests on the remaining humans plus the held-out
    type; a fold's train and test never share a human utterance.
    """
    if spoof_types is None:
        spoof_types = trials.spoof_types()
    if len(spoof_types) < 2:
        raise EvalError("need at least two spoof types for the protocol")
    humans = [e for e in trials.entries if e.label == HUMAN]
    folds = []
    for fold_idx, held in enumerate(spoof_types):
        held_entries = [e for e in trials.entries if e.label == SPOOF and e.spoof_type == held]
        if not held_entries:
            warnings.warn(f"spoof type {held} has no utterances; fold skipped")
            continue
        others = [e for e in trials.entries if e.label == SPOOF and e.spoof_type != held]
        rng = np.random.default_rng(_fold_seed(seed, held))
        order = rng.permutation(len(humans))
        half = len(humans) // 2
        train_humans = [humans[i] for i in sorted(order[:half])]
        test_humans = [humans[i] for i in sorted(order[half:])]
        folds.append(
            ProtocolFold(
                held,
                TrialSet(train_humans + others),
                TrialSet(test_humans + held_entries),
            )
        )
    return folds


def _fold_seed(seed: int, tag: str) -> int:
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little")
