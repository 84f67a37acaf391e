import math

import numpy as np
import pytest
import scipy.stats

from t2tlab.errors import DataError
from t2tlab.metrics import (
    BENCHMARKS,
    accuracy,
    benchmark_average,
    bleu,
    exact_match,
    intl_tokenize,
    matthews_corr,
    normalize_answer,
    pearson_corr,
    rouge,
    spearman_corr,
    token_f1,
)
from t2tlab.rng import Rng


class TestAccuracyEm:
    def test_identical(self):
        assert accuracy(["a", "b"], ["a", "b"]) == 1.0
        assert exact_match(["a", "b"], ["a", "b"]) == 1.0

    def test_disjoint(self):
        assert accuracy(["a", "b"], ["x", "y"]) == 0.0

    def test_half(self):
        assert accuracy(["a", "b"], ["a", "y"]) == 0.5

    def test_em_normalization(self):
        assert exact_match(["The  Cat!"], ["cat"]) == 1.0
        assert normalize_answer("An apple, a day.") == "apple day"

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            accuracy(["a"], ["a", "b"])

    def test_token_f1_hand_value(self):
        # pred 3 tokens, gold 4 tokens, overlap 2: P=2/3, R=1/2, F=4/7
        got = token_f1(["red green blue"], ["red green yellow black"])
        assert got == pytest.approx(2 * (2 / 3) * (1 / 2) / ((2 / 3) + (1 / 2)))

    def test_permutation_invariance(self):
        preds = ["a", "b", "c", "a"]
        golds = ["a", "x", "c", "b"]
        perm = [2, 0, 3, 1]
        assert accuracy(preds, golds) == accuracy([preds[i] for i in perm], [golds[i] for i in perm])


class TestMatthews:
    def test_perfect(self):
        assert matthews_corr([1, 0, 1, 0], [1, 0, 1, 0]) == 1.0

    def test_inverted(self):
        assert matthews_corr([0, 1, 0, 1], [1, 0, 1, 0]) == -1.0

    def test_hand_confusion_matrix(self):
        # (TP, FP, FN, TN) = (3, 1, 2, 4): (3*4 - 1*2) / sqrt(4*5*5*6)
        preds = [1] * 3 + [1] + [0] * 2 + [0] * 4
        golds = [1] * 3 + [0] + [1] * 2 + [0] * 4
        assert matthews_corr(preds, golds) == pytest.approx(10 / math.sqrt(600), abs=1e-3)

    def test_against_sklearn_oracle(self):
        from sklearn.metrics import matthews_corrcoef

        rng = Rng(3)
        preds = list(rng.integers(0, 2, size=200))
        golds = list(rng.integers(0, 2, size=200))
        assert matthews_corr(preds, golds) == pytest.approx(matthews_corrcoef(golds, preds), abs=1e-12)

    def test_symmetry(self):
        rng = Rng(4)
        preds = list(rng.integers(0, 2, size=50))
        golds = list(rng.integers(0, 2, size=50))
        assert matthews_corr(preds, golds) == pytest.approx(matthews_corr(golds, preds))

    def test_zero_denominator(self):
        assert matthews_corr([1, 1], [1, 0]) == 0.0

    def test_non_binary_rejected(self):
        with pytest.raises(DataError):
            matthews_corr([0, 1, 2], [0, 1, 2])


class TestCorrelations:
    def test_linear_pearson(self):
        x = [1.0, 2.0, 3.0, 4.0]
        assert pearson_corr(x, [2 * v + 1 for v in x]) == pytest.approx(1.0)

    def test_monotone_spearman(self):
        x = [-2.0, -1.0, 0.5, 2.0, 3.0]
        assert spearman_corr(x, [v**3 for v in x]) == pytest.approx(1.0)

    def test_five_point_hand_set_vs_scipy(self):
        x = [1.0, 2.0, 3.0, 4.0, 5.0]
        y = [2.0, 1.0, 4.0, 3.0, 5.0]
        assert pearson_corr(x, y) == pytest.approx(scipy.stats.pearsonr(x, y).statistic, abs=1e-12)
        assert spearman_corr(x, y) == pytest.approx(scipy.stats.spearmanr(x, y).statistic, abs=1e-12)

    def test_ties_average_ranks(self):
        x = [1.0, 1.0, 2.0, 3.0]
        y = [4.0, 5.0, 6.0, 7.0]
        assert spearman_corr(x, y) == pytest.approx(scipy.stats.spearmanr(x, y).statistic, abs=1e-12)

    def test_constant_vector_flagged_zero(self):
        assert pearson_corr([1.0, 1.0, 1.0], [1.0, 2.0, 3.0]) == 0.0


class TestIntlTokenize:
    def test_punctuation_split(self):
        assert intl_tokenize("Hello, world!") == ["Hello", ",", "world", "!"]

    def test_decimal_number_kept(self):
        assert intl_tokenize("a 3.5 rating") == ["a", "3.5", "rating"]

    def test_trailing_period_split(self):
        assert intl_tokenize("It is 3.") == ["It", "is", "3", "."]

    def test_symbols_always_split(self):
        assert intl_tokenize("costs $5") == ["costs", "$", "5"]


class TestBleu:
    def test_identical_corpus_is_100(self):
        hyps = ["the cat sat on the mat.", "a long sentence with many words here."]
        assert bleu(hyps, list(hyps)) == pytest.approx(100.0)

    def test_zero_overlap_smoothed_small_positive(self):
        hyp = [" ".join(f"x{i}" for i in range(30))]
        ref = [" ".join(f"y{i}" for i in range(30))]
        value = bleu(hyp, ref)
        assert 0.0 < value < 1.0

    def test_three_sentence_hand_fixture(self):
        hyps = ["the cat sat on the mat", "a dog barked", "hello there world"]
        refs = ["the cat sat on the mat", "the dog barked loudly", "hello world there again"]
        # hand counts: p1=11/12, p2=6/9, p3=4/6, p4=3/3; hyp len 12, ref len 14
        expected = 100 * math.exp(1 - 14 / 12) * (
            (11 / 12) * (6 / 9) * (4 / 6) * (3 / 3)
        ) ** 0.25
        assert bleu(hyps, refs) == pytest.approx(expected, abs=1e-9)

    def test_duplicating_corpus_invariant(self):
        # needs real matches at every order: smoothing of a zero count is
        # the one part of the score that does not scale with corpus size
        hyps = ["the cat sat on the mat today", "a dog barked twice loudly"]
        refs = ["the cat sat on the mat", "a dog barked twice"]
        assert bleu(hyps * 2, refs * 2) == pytest.approx(bleu(hyps, refs), abs=1e-12)

    def test_empty_corpus_rejected(self):
        with pytest.raises(DataError):
            bleu([], [])

    def test_brevity_penalty_only_when_short(self):
        long_hyp = ["the cat sat on the mat tonight"]
        ref = ["the cat sat on the mat"]
        assert bleu(long_hyp, ref) > bleu(["the cat sat"], ref)


class TestRouge:
    def test_identical(self):
        for v in ("1", "2", "L"):
            assert rouge(["the cat sat"], ["the cat sat"], v) == pytest.approx(1.0)

    def test_disjoint_vocab(self):
        for v in ("1", "2", "L"):
            assert rouge(["aaa bbb"], ["ccc ddd"], v) == 0.0

    def test_lcs_hand_fixture(self):
        # hyp 6 tokens, ref 7 tokens, LCS length 4 -> F = 8/13
        hyp = ["a b c d x y"]
        ref = ["a b q c d z w"]
        assert rouge(hyp, ref, "L") == pytest.approx(8 / 13, abs=1e-12)

    def test_rouge1_order_invariant_on_multisets(self):
        assert rouge(["c a b"], ["a b c"], "1") == pytest.approx(1.0)

    def test_rougeL_never_exceeds_rouge1(self):
        rng = Rng(7)
        words = ["w%d" % i for i in range(12)]
        for _ in range(50):
            hyp = " ".join(words[i] for i in rng.integers(0, 12, size=8))
            ref = " ".join(words[i] for i in rng.integers(0, 12, size=10))
            assert rouge([hyp], [ref], "L") <= rouge([hyp], [ref], "1") + 1e-12


class TestBenchmarkAverage:
    def full_glue(self, value):
        return {task: {m: value for m in metrics}
                for task, metrics in BENCHMARKS["glue"]["tasks"].items()}

    def test_single_task_identity(self):
        scores = {task: {m: 0.5 for m in metrics}
                  for task, metrics in BENCHMARKS["superglue"]["tasks"].items()}
        assert benchmark_average(scores, "superglue") == pytest.approx(0.5)

    def test_two_task_mean(self):
        scores = self.full_glue(0.0)
        for task in scores:
            for m in scores[task]:
                scores[task][m] = 0.80
        scores["rte"]["accuracy"] = 0.90
        # 7 tasks at 0.80, rte at 0.90 (wnli excluded): mean = (7*0.8+0.9)/8
        assert benchmark_average(scores, "glue") == pytest.approx((7 * 0.8 + 0.9) / 8)

    def test_paired_metrics_hand_average(self):
        scores = self.full_glue(0.6)
        scores["mrpc"] = {"f1": 0.9, "accuracy": 0.7}  # task score 0.8
        want = (0.8 + 7 * 0.6) / 8
        assert benchmark_average(scores, "glue") == pytest.approx(want)

    def test_wnli_excluded(self):
        scores = self.full_glue(0.5)
        scores["wnli"] = {"accuracy": 0.0}
        baseline = benchmark_average(scores, "glue")
        scores["wnli"]["accuracy"] = 1.0
        assert benchmark_average(scores, "glue") == baseline

    def test_missing_task_rejected(self):
        scores = self.full_glue(0.5)
        del scores["cola"]
        with pytest.raises(DataError):
            benchmark_average(scores, "glue")
