import numpy as np
import pytest

from rogpl.metrics import UNKNOWN, auroc, macro_f1


def brute_force_macro_f1(preds, truth):
    """Independent oracle: explicit confusion-matrix build per class."""
    classes = sorted(set(truth) | set(preds))
    f1s = []
    for c in classes:
        tp = sum(1 for p, t in zip(preds, truth) if p == c and t == c)
        fp = sum(1 for p, t in zip(preds, truth) if p == c and t != c)
        fn = sum(1 for p, t in zip(preds, truth) if p != c and t == c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * precision * recall / (precision + recall)
                   if precision + recall else 0.0)
    return sum(f1s) / len(f1s)


def brute_force_auroc(scores, flags):
    """Independent oracle: O(n^2) pair counting with half-credit ties."""
    pos = [s for s, f in zip(scores, flags) if f]
    neg = [s for s, f in zip(scores, flags) if not f]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


class TestMacroF1:
    def test_perfect(self):
        preds = np.array([0, 1, 2, 0])
        assert macro_f1(preds, preds) == 1.0

    def test_binary_hand_example(self):
        truth = np.array([0, 0, 1, 1])
        preds = np.array([0, 1, 1, 1])
        assert macro_f1(preds, truth) == pytest.approx((2 / 3 + 0.8) / 2)
        assert macro_f1(preds, truth) == pytest.approx(0.73333, abs=1e-5)

    def test_constant_prediction_three_classes(self):
        truth = np.array([0, 1, 2] * 4)
        preds = np.zeros(12, dtype=int)
        assert macro_f1(preds, truth) == pytest.approx((2 / 4) / 3)
        assert macro_f1(preds, truth) == pytest.approx(0.16667, abs=1e-5)

    def test_unknown_counts_as_extra_class(self):
        truth = np.array([0, 1, UNKNOWN, UNKNOWN])
        preds = np.array([0, 1, UNKNOWN, 0])
        # class 0: tp=1 fp=1 fn=0 -> f1 2/3; class 1: 1.0; UNKNOWN: tp=1 fp=0 fn=1 -> 2/3
        assert macro_f1(preds, truth) == pytest.approx((2 / 3 + 1.0 + 2 / 3) / 3)

    def test_known_only_mode_drops_unknown_truth(self):
        truth = np.array([0, 1, UNKNOWN])
        preds = np.array([0, UNKNOWN, 1])
        got = macro_f1(preds, truth, c_plus_one=False)
        # evaluated on the two known-truth rows; class 1 predicted never/wrong
        assert got == pytest.approx((1.0 + 0.0) / 2)

    def test_predicted_only_class_counts_zero(self):
        truth = np.array([0, 0, 0])
        preds = np.array([0, 0, 1])
        # class 0: tp=2 fp=0 fn=1 -> 0.8; class 1 predicted but never true -> 0
        assert macro_f1(preds, truth) == pytest.approx((0.8 + 0.0) / 2)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            macro_f1(np.array([]), np.array([]))

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 40))
        c = int(rng.integers(2, 6))
        truth = rng.integers(-1, c, size=n)
        preds = rng.integers(-1, c, size=n)
        got = macro_f1(preds, truth)
        assert got == pytest.approx(brute_force_macro_f1(list(preds), list(truth)))


class TestAuroc:
    def test_perfect_separation(self):
        scores = np.array([0.9, 0.8, 0.1, 0.2])
        flags = np.array([True, True, False, False])
        assert auroc(scores, flags) == 1.0

    def test_all_ties_half(self):
        scores = np.full(10, 0.5)
        flags = np.array([True] * 4 + [False] * 6)
        assert auroc(scores, flags) == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            auroc(np.array([0.1, 0.2]), np.array([True, True]))

    def test_matches_pair_counting_oracle(self):
        rng = np.random.default_rng(0)
        scores = np.round(rng.random(30), 1)  # coarse grid forces ties
        flags = rng.random(30) < 0.4
        if flags.all() or not flags.any():
            flags[0] = ~flags[0]
        assert auroc(scores, flags) == pytest.approx(
            brute_force_auroc(list(scores), list(flags)))

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_brute_force_random(self, seed):
        rng = np.random.default_rng(seed + 1000)
        n = int(rng.integers(4, 50))
        scores = np.round(rng.random(n), 2)
        flags = rng.random(n) < 0.5
        if flags.all():
            flags[0] = False
        if not flags.any():
            flags[0] = True
        assert auroc(scores, flags) == pytest.approx(
            brute_force_auroc(list(scores), list(flags)), abs=1e-12)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(5)
        scores = rng.random(40)
        flags = rng.random(40) < 0.5
        flags[0], flags[1] = True, False
        base = auroc(scores, flags)
        assert auroc(np.exp(3 * scores), flags) == pytest.approx(base)
        assert auroc(scores ** 3 + 7, flags) == pytest.approx(base)
