import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boxsieve.metrics import Confusion, confusion, roc_auc, summarize


def brute_force_auc(scores, truth):
    """Oracle: count (positive, negative) pairs directly, ties worth 1/2."""
    pos = [s for s, t in zip(scores, truth) if t > 0]
    neg = [s for s, t in zip(scores, truth) if t <= 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def recount_confusion(truth, pred):
    """Oracle: naive recount loop."""
    tp = fp = tn = fn = 0
    for t, p in zip(truth, pred):
        if t > 0 and p > 0:
            tp += 1
        elif t <= 0 and p > 0:
            fp += 1
        elif t <= 0 and p <= 0:
            tn += 1
        else:
            fn += 1
    return tp, fp, tn, fn


class TestConfusion:
    def test_two_sample_enumeration(self):
        c = confusion([+1, -1], [+1, +1])
        assert (c.tp, c.fp, c.tn, c.fn) == (1, 1, 0, 0)

    def test_perfect_prediction_has_no_errors(self):
        truth = [+1, -1, +1, +1, -1, -1, +1, -1, +1, -1]
        c = confusion(truth, truth)
        assert c.fp == 0 and c.fn == 0
        assert c.tp == 5 and c.tn == 5

    def test_against_recount_oracle(self):
        rng = np.random.default_rng(7)
        truth = rng.choice([-1, 1], size=50)
        pred = rng.choice([-1, 1], size=50)
        c = confusion(truth, pred)
        assert (c.tp, c.fp, c.tn, c.fn) == recount_confusion(truth, pred)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            confusion([1, -1], [1])

    def test_counts_partition_samples(self):
        rng = np.random.default_rng(3)
        truth = rng.choice([-1, 1], size=31)
        pred = rng.choice([-1, 1], size=31)
        assert confusion(truth, pred).total == 31


class TestSummarize:
    # Published contingency counts for the plate-contamination scenario:
    # TP=814, FP=300, TN=701, FN=186.
    def test_plate_row_sensitivity(self):
        r = summarize(Confusion(tp=814, fp=300, tn=701, fn=186))
        assert r.sensitivity == 814 / (814 + 186)
        assert r.sensitivity == 0.814

    def test_plate_row_specificity(self):
        r = summarize(Confusion(tp=814, fp=300, tn=701, fn=186))
        assert r.specificity == 701 / (701 + 300)
        assert round(r.specificity, 3) == 0.700

    def test_plate_row_ppv(self):
        r = summarize(Confusion(tp=814, fp=300, tn=701, fn=186))
        assert r.ppv == pytest.approx(814 / 1114, abs=1e-12)
        assert round(r.ppv, 4) == 0.7307

    def test_undefined_ratios_absent_not_zero(self):
        # No predicted positives: PPV undefined.
        r = summarize(Confusion(tp=0, fp=0, tn=5, fn=3))
        assert r.ppv is None
        assert r.sensitivity == 0.0
        # No actual positives: sensitivity undefined.
        r = summarize(Confusion(tp=0, fp=2, tn=5, fn=0))
        assert r.sensitivity is None
        assert r.balanced_accuracy is None

    def test_balanced_accuracy_is_mean_of_sens_spec(self):
        r = summarize(Confusion(tp=8, fp=2, tn=6, fn=4))
        assert r.balanced_accuracy == pytest.approx((r.sensitivity + r.specificity) / 2)

    def test_fractions_in_unit_interval(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            tp, fp, tn, fn = rng.integers(0, 40, size=4)
            r = summarize(Confusion(tp=int(tp), fp=int(fp), tn=int(tn), fn=int(fn)))
            for v in (r.sensitivity, r.specificity, r.ppv, r.balanced_accuracy):
                if v is not None:
                    assert 0.0 <= v <= 1.0


class TestRocAuc:
    def test_perfect_separation(self):
        assert roc_auc([0.9, 0.8, 0.7, 0.1], [+1, +1, -1, -1]) == 1.0

    def test_all_ties_give_half(self):
        assert roc_auc([0.5, 0.5, 0.5, 0.5], [+1, +1, -1, -1]) == 0.5

    def test_three_of_four_pairs(self):
        # + scores {0.6, 0.4}, - scores {0.5, 0.3}: 3 of 4 pairs ordered.
        assert roc_auc([0.6, 0.4, 0.5, 0.3], [+1, +1, -1, -1]) == 0.75

    def test_against_pair_counting_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            n = int(rng.integers(2, 50))
            truth = rng.choice([-1, 1], size=n)
            if len(set(truth.tolist())) < 2:
                truth[0] = -truth[0]
            # Quantized scores so ties actually occur.
            scores = np.round(rng.random(n), 1)
            assert roc_auc(scores, truth) == pytest.approx(
                brute_force_auc(scores, truth), abs=1e-12
            )

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            roc_auc([0.1, 0.2], [+1, +1])

    @given(
        scores=st.lists(st.integers(0, 10), min_size=2, max_size=30),
        labels=st.lists(st.booleans(), min_size=2, max_size=30),
    )
    @settings(max_examples=150, deadline=None)
    def test_symmetry_properties(self, scores, labels):
        n = min(len(scores), len(labels))
        scores = np.asarray(scores[:n], dtype=float)
        truth = np.asarray([1 if b else -1 for b in labels[:n]])
        if len(set(truth.tolist())) < 2:
            return
        auc = roc_auc(scores, truth)
        # Negating scores and swapping classes leaves the AUC unchanged.
        assert roc_auc(-scores, -truth) == pytest.approx(auc, abs=1e-12)
        # Without ties, negating scores alone complements the AUC.
        if len(np.unique(scores)) == n:
            assert roc_auc(-scores, truth) == pytest.approx(1.0 - auc, abs=1e-12)
