import math

import numpy as np
import pytest

from fidpoint.boost import (
    Booster,
    StrongClassifier,
    TrainingSample,
    WeakClassifier,
    adaboost,
    eval_strong,
    init_weights,
    sample_inv_sigma,
    train_weak,
)
from fidpoint.haar import FeatureKind, FeatureSet, HaarFeature, enumerate_features, feature_value
from fidpoint.raster import GrayImage, build_tables


def dyadic_weights(rng, n, denom_bits=12):
    """Random normalized weights that are exact binary fractions.

    Keeps every partial sum exact in float64 so stump errors computed by
    any summation order agree bit-for-bit.
    """
    ints = rng.integers(1, 2**denom_bits, size=n)
    total_bits = int(np.ceil(np.log2(ints.sum())))
    scale = 2.0 ** -(denom_bits + total_bits)
    w = ints * scale
    return w  # unnormalised but exact; stump search never needs sum == 1


def exhaustive_stump(values, labels, weights):
    """Independent O(n^2) search over all candidate (threshold, parity)."""
    v = np.asarray(values, dtype=np.float64)
    y = np.asarray(labels)
    w = np.asarray(weights, dtype=np.float64)
    sv = np.unique(v)
    cands = [-np.inf, np.inf]
    cands += [(a + b) / 2.0 for a, b in zip(sv[:-1], sv[1:])]
    best = None
    for parity in (1, -1):
        for t in cands:
            pred = (parity * v < parity * t).astype(int)
            err = float(np.dot(w, np.abs(pred - y)))
            key = (err, t, 0 if parity == 1 else 1)
            if best is None or key < best:
                best = key
    return best  # (error, threshold, parity_rank)


# --- init_weights -----------------------------------------------------------

def make_samples(labels):
    img = GrayImage(np.zeros((4, 4), dtype=np.uint8))
    t = build_tables(img)
    return [TrainingSample(t, int(l)) for l in labels]


def test_init_weights_one_each():
    s = init_weights(make_samples([1, 0]))
    assert [x.weight for x in s] == [0.5, 0.5]


def test_init_weights_two_each():
    s = init_weights(make_samples([1, 1, 0, 0]))
    assert [x.weight for x in s] == [0.25] * 4


def test_init_weights_three_one():
    s = init_weights(make_samples([1, 1, 1, 0]))
    assert [x.weight for x in s] == pytest.approx([1 / 6, 1 / 6, 1 / 6, 1 / 2])


def test_init_weights_degenerate():
    with pytest.raises(ValueError):
        init_weights(make_samples([1, 1]))


# --- train_weak -------------------------------------------------------------

def test_train_weak_separable():
    wk = train_weak([1, 2, 9, 10], [1, 1, 0, 0], [0.25] * 4)
    assert wk.error == 0.0
    assert wk.threshold == 5.5
    assert wk.parity == 1


def test_train_weak_all_positive_sentinel():
    wk = train_weak([3, 1, 4], [1, 1, 1], [1 / 3] * 3)
    assert wk.error == 0.0
    assert math.isinf(wk.threshold)


def test_train_weak_matches_exhaustive():
    rng = np.random.default_rng(77)
    for _ in range(100):
        n = int(rng.integers(2, 51))
        v = rng.integers(-40, 40, n).astype(float)
        y = rng.integers(0, 2, n)
        w = dyadic_weights(rng, n)
        wk = train_weak(v, y, w)
        err, t, prank = exhaustive_stump(v, y, w)
        assert wk.error == err
        assert wk.threshold == t
        assert (0 if wk.parity == 1 else 1) == prank
        # classification vectors agree as well
        got = (wk.parity * v < wk.parity * wk.threshold).astype(int)
        parity = 1 if prank == 0 else -1
        want = (parity * v < parity * t).astype(int)
        assert (got == want).all()


# --- boosting rounds ---------------------------------------------------------

def test_worked_update_quarter_error():
    values = np.array([[1.0], [6.0], [4.0], [9.0]])
    labels = np.array([1, 1, 0, 0])
    weights = np.full(4, 0.25)
    b = Booster(values, labels, weights)
    alpha, weak, pred = b.step()
    assert weak.error == pytest.approx(0.25, abs=1e-15)
    assert alpha == pytest.approx(math.log(3.0), abs=1e-12)
    norm = b.weights / b.weights.sum()
    assert norm == pytest.approx([1 / 6, 1 / 2, 1 / 6, 1 / 6], abs=1e-12)
    assert list(pred) == [1, 0, 0, 0]  # sample 1 (v=6, label 1) is the miss


def test_weights_stay_distribution():
    rng = np.random.default_rng(5)
    values = rng.normal(size=(30, 8))
    labels = rng.integers(0, 2, 30)
    labels[0], labels[1] = 1, 0
    weights = np.full(30, 1 / 30)
    b = Booster(values, labels, weights)
    for _ in range(10):
        before = b.weights.copy()
        b.step()
        normalised = before / before.sum()
        assert abs(normalised.sum() - 1.0) <= 1e-9
        assert (b.weights >= 0).all()


def test_correct_samples_shrink_by_beta():
    values = np.array([[1.0], [6.0], [4.0], [9.0]])
    labels = np.array([1, 1, 0, 0])
    b = Booster(values, labels, np.full(4, 0.25))
    _, weak, pred = b.step()
    beta = weak.error / (1 - weak.error)
    correct = pred == labels
    assert b.weights[correct] == pytest.approx(0.25 * beta)
    assert b.weights[~correct] == pytest.approx(0.25)  # exponent 1-e is zero


def test_selected_weak_is_global_minimum():
    rng = np.random.default_rng(11)
    values = rng.integers(-20, 20, size=(25, 12)).astype(float)
    labels = rng.integers(0, 2, 25)
    labels[:2] = [0, 1]
    w = np.full(25, 1 / 25)
    b = Booster(values, labels, w.copy())
    _, weak, _ = b.step()
    norm = w / w.sum()
    per_feature = [train_weak(values[:, j], labels, norm).error for j in range(12)]
    assert weak.error == min(per_feature)
    assert weak.feature_index == int(np.argmin(per_feature))


def test_alpha_always_positive():
    rng = np.random.default_rng(13)
    values = rng.normal(size=(20, 5))
    labels = rng.integers(0, 2, 20)
    labels[:2] = [0, 1]
    b = Booster(values, labels, np.full(20, 0.05))
    for _ in range(6):
        alpha, _, _ = b.step()
        assert alpha > 0


# --- adaboost on real patches --------------------------------------------------

def half_bright_samples(rng, n_pos, n_neg, side=6):
    samples = []
    for _ in range(n_pos):
        px = rng.integers(0, 40, (side, side))
        px[:, side // 2 :] += 180  # bright right half
        samples.append(TrainingSample(build_tables(GrayImage(px.astype(np.uint8))), 1))
    for _ in range(n_neg):
        px = rng.integers(0, 40, (side, side))
        px[:, : side // 2] += 180  # bright left half
        samples.append(TrainingSample(build_tables(GrayImage(px.astype(np.uint8))), 0))
    return samples


def test_adaboost_separable_reaches_zero_error():
    rng = np.random.default_rng(17)
    samples = init_weights(half_bright_samples(rng, 20, 20))
    features = enumerate_features(6, 6, FeatureSet.BASIC)
    sc = adaboost(samples, features, rounds=20)
    errors = 0
    for s in samples:
        _, decision = eval_strong(sc, s.tables, inv_sigma=sample_inv_sigma(s.tables))
        errors += int(decision) != s.label
    assert errors == 0
    assert sc.threshold == pytest.approx(0.5 * sc.alpha_sum)


def test_adaboost_deterministic():
    rng = np.random.default_rng(19)
    samples = half_bright_samples(rng, 8, 8)
    features = enumerate_features(6, 6, FeatureSet.BASIC)
    a = adaboost(init_weights(list(samples)), features, rounds=5)
    b = adaboost(init_weights(list(samples)), features, rounds=5)
    assert [(al, w.feature_index, w.threshold, w.parity) for al, w in a.rounds] == [
        (al, w.feature_index, w.threshold, w.parity) for al, w in b.rounds
    ]


# --- eval_strong ---------------------------------------------------------------

def one_weak_classifier(alpha=math.log(3.0)):
    f = HaarFeature(FeatureKind.EDGE_H, 0, 0, 2, 4)
    wk = WeakClassifier(threshold=10.0, parity=1, feature=f, feature_index=0)
    return StrongClassifier(rounds=[(alpha, wk)], threshold=0.5 * alpha)


def test_eval_strong_single_weak_reduces_to_vote():
    rng = np.random.default_rng(23)
    sc = one_weak_classifier()
    for _ in range(20):
        img = GrayImage(rng.integers(0, 256, (4, 4), dtype=np.uint8))
        t = build_tables(img)
        v = feature_value(sc.rounds[0][1].feature, t)
        score, decision = eval_strong(sc, t)
        assert decision == (v < 10.0)
        assert score == (math.log(3.0) if v < 10.0 else 0.0)


def test_eval_strong_threshold_extremes():
    rng = np.random.default_rng(29)
    img = GrayImage(rng.integers(0, 256, (4, 4), dtype=np.uint8))
    t = build_tables(img)
    sc = one_weak_classifier()
    sc.threshold = -np.inf
    assert eval_strong(sc, t)[1] is True
    sc.threshold = np.inf
    assert eval_strong(sc, t)[1] is False


def test_eval_strong_matches_term_by_term():
    rng = np.random.default_rng(31)
    features = enumerate_features(5, 5, FeatureSet.BASIC)
    for _ in range(20):
        img = GrayImage(rng.integers(0, 256, (5, 5), dtype=np.uint8))
        t = build_tables(img)
        rounds = []
        for _ in range(int(rng.integers(1, 6))):
            f = features[int(rng.integers(0, len(features)))]
            wk = WeakClassifier(
                threshold=float(rng.normal(0, 50)),
                parity=int(rng.choice([-1, 1])),
                feature=f,
            )
            rounds.append((float(rng.uniform(0.1, 2.0)), wk))
        sc = StrongClassifier(rounds=rounds, threshold=0.5 * sum(a for a, _ in rounds))
        inv = sample_inv_sigma(t)
        score, decision = eval_strong(sc, t, inv_sigma=inv)
        want = 0.0
        for a, wk in rounds:
            v = feature_value(wk.feature, t, inv_sigma=inv)
            want += a * (1 if wk.parity * v < wk.parity * wk.threshold else 0)
        assert score == want
        assert decision == (score >= sc.threshold)
