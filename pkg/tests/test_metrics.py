import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pcsflow.errors import EmptyInput, LengthMismatch
from pcsflow.metrics import (
    ClassificationScores,
    RegressionScores,
    SubmissionTally,
    anps,
    classification_scores,
    cs,
    nps,
    regression_scores,
    vs,
)

from oracles import confusion_scores_oracle


class TestClassificationScores:
    def test_perfect_predictions(self):
        s = classification_scores(["a", "b", "a"], ["a", "b", "a"])
        assert (s.accuracy, s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0, 1.0)

    def test_binary_fixture_matches_confusion_oracle(self):
        y_true = ["1", "1", "0", "0"]
        y_pred = ["1", "0", "0", "0"]
        s = classification_scores(y_true, y_pred)
        acc, prec, rec, f1 = confusion_scores_oracle(y_true, y_pred)
        assert s.accuracy == pytest.approx(acc) == 0.75
        assert s.precision == pytest.approx(prec)
        assert s.recall == pytest.approx(rec)
        assert s.f1 == pytest.approx(f1)

    def test_never_predicted_class_has_zero_precision(self):
        # class "1" never predicted: its precision is 0 by convention
        s = classification_scores(["1", "0"], ["0", "0"])
        acc, prec, rec, f1 = confusion_scores_oracle(["1", "0"], ["0", "0"])
        assert s.precision == pytest.approx(prec)
        assert prec == pytest.approx((0.5 + 0.0) / 2)

    def test_length_mismatch_and_empty(self):
        with pytest.raises(LengthMismatch):
            classification_scores(["a"], ["a", "b"])
        with pytest.raises(EmptyInput):
            classification_scores([], [])

    @given(
        st.lists(
            st.tuples(st.sampled_from("abc"), st.sampled_from("abc")),
            min_size=1,
            max_size=30,
        )
    )
    def test_joint_permutation_invariance(self, pairs):
        y_true = [t for t, _ in pairs]
        y_pred = [p for _, p in pairs]
        base = classification_scores(y_true, y_pred)
        rng = random.Random(0)
        order = list(range(len(pairs)))
        rng.shuffle(order)
        shuffled = classification_scores(
            [y_true[i] for i in order], [y_pred[i] for i in order]
        )
        assert shuffled == base

    @given(
        st.lists(
            st.tuples(st.sampled_from("abc"), st.sampled_from("abc")),
            min_size=1,
            max_size=30,
        )
    )
    def test_label_renaming_invariance(self, pairs):
        rename = {"a": "zebra", "b": "yak", "c": "xerus"}
        y_true = [t for t, _ in pairs]
        y_pred = [p for _, p in pairs]
        base = classification_scores(y_true, y_pred)
        renamed = classification_scores(
            [rename[t] for t in y_true], [rename[p] for p in y_pred]
        )
        assert renamed.accuracy == pytest.approx(base.accuracy)
        assert renamed.precision == pytest.approx(base.precision)
        assert renamed.recall == pytest.approx(base.recall)
        assert renamed.f1 == pytest.approx(base.f1)


class TestRegressionScores:
    def test_perfect(self):
        s = regression_scores([1.0, 2.0], [1.0, 2.0])
        assert (s.rmse, s.mae, s.r2) == (0.0, 0.0, 1.0)

    def test_predicting_mean_gives_zero_r2(self):
        s = regression_scores([1.0, 3.0], [2.0, 2.0])
        assert s.r2 == pytest.approx(0.0)

    def test_fixture_ss_res_equals_ss_tot(self):
        # truth [0,2], pred [1,1]: SS_res = 2, SS_tot = 2
        s = regression_scores([0.0, 2.0], [1.0, 1.0])
        assert s.rmse == pytest.approx(1.0)
        assert s.mae == pytest.approx(1.0)
        assert s.r2 == pytest.approx(0.0)

    def test_constant_truth_conventions(self):
        exact = regression_scores([2.0, 2.0], [2.0, 2.0])
        assert exact.r2 == 0.0
        off = regression_scores([2.0, 2.0], [3.0, 3.0])
        assert off.r2 < -1e6  # sentinel, not -inf

    def test_rmse_not_always_geq_mae_is_not_asserted(self):
        s = regression_scores([0.0, 0.0], [0.5, 0.5])
        assert s.rmse == pytest.approx(s.mae)


class TestNps:
    def test_perfect_classifier(self):
        assert nps(ClassificationScores(1.0, 1.0, 1.0, 1.0)) == 1.0

    def test_perfect_regressor(self):
        assert nps(RegressionScores(0.0, 0.0, 1.0)) == 1.0

    def test_regression_formula_value(self):
        # (1/(1+1) + 1/(1+0.5) + 0.5)/3
        value = nps(RegressionScores(1.0, 0.5, 0.5))
        assert value == pytest.approx((0.5 + 1 / 1.5 + 0.5) / 3)
        assert value == pytest.approx(0.5556, abs=5e-5)

    @given(
        st.lists(
            st.tuples(st.sampled_from("abcd"), st.sampled_from("abcd")),
            min_size=1,
            max_size=40,
        )
    )
    def test_classification_nps_in_unit_interval(self, pairs):
        s = classification_scores([t for t, _ in pairs], [p for _, p in pairs])
        assert 0.0 <= nps(s) <= 1.0

    def test_regression_nps_can_be_negative(self):
        assert nps(RegressionScores(1.0, 1.0, -4.0)) < 0

    def test_monotone_in_each_component(self):
        base = ClassificationScores(0.5, 0.5, 0.5, 0.5)
        for bump in (
            ClassificationScores(0.6, 0.5, 0.5, 0.5),
            ClassificationScores(0.5, 0.6, 0.5, 0.5),
            ClassificationScores(0.5, 0.5, 0.6, 0.5),
            ClassificationScores(0.5, 0.5, 0.5, 0.6),
        ):
            assert nps(bump) > nps(base)
        reg = RegressionScores(1.0, 1.0, 0.0)
        assert nps(RegressionScores(0.5, 1.0, 0.0)) > nps(reg)
        assert nps(RegressionScores(1.0, 0.5, 0.0)) > nps(reg)
        assert nps(RegressionScores(1.0, 1.0, 0.5)) > nps(reg)


class TestAggregates:
    def test_anps_mean_and_population_sd(self):
        agg = anps([0.8, 0.9])
        assert agg.anps == pytest.approx(0.85)
        assert agg.sd == pytest.approx(0.05)

    def test_single_run_sd_zero(self):
        assert anps([0.7]).sd == 0.0

    def test_all_equal_sd_zero(self):
        assert anps([0.5, 0.5, 0.5]).sd == 0.0

    def test_empty_rejected(self):
        with pytest.raises(EmptyInput):
            anps([])

    def test_vs_values(self):
        assert vs(SubmissionTally(5, 6)) == pytest.approx(5 / 6)
        assert vs(SubmissionTally(5, 5)) == 1.0
        assert vs(SubmissionTally(0, 3)) == 0.0

    def test_tally_invariant(self):
        with pytest.raises(ValueError):
            SubmissionTally(6, 5)
        with pytest.raises(ValueError):
            SubmissionTally(0, 0)


class TestComprehensiveScore:
    # (VS, ANPS, printed CS) triples from the published comparison table
    REPORTED = [
        (0.833, 0.848, 0.841),
        (1.000, 0.900, 0.950),
        (1.000, 0.832, 0.916),
        (1.000, 0.855, 0.927),  # printed rounding drops the trailing 5
        (0.556, 0.824, 0.690),
    ]

    @pytest.mark.parametrize("vs_value,anps_value,reported", REPORTED)
    def test_reported_rows_within_rounding(self, vs_value, anps_value, reported):
        assert abs(cs(vs_value, anps_value) - reported) <= 0.001

    def test_zero(self):
        assert cs(0.0, 0.0) == 0.0

    def test_equal_weighting(self):
        assert cs(1.0, 0.0) == 0.5
        assert cs(0.0, 1.0) == 0.5
