import math

import numpy as np
import pytest

from svsnet.metrics import (
    MetricReport,
    UndefinedCorrelationError,
    evaluate_system,
    evaluate_utterance,
    pearson_lcc,
    rank_average,
    round_clip,
    spearman_srcc,
)
from svsnet.signal_io import GroupedPair


def naive_pearson(x, y):
    """Textbook closed form, independent of the library implementation."""
    n = len(x)
    sx, sy = sum(x), sum(y)
    sxx = sum(v * v for v in x)
    syy = sum(v * v for v in y)
    sxy = sum(a * b for a, b in zip(x, y))
    return (n * sxy - sx * sy) / math.sqrt((n * sxx - sx * sx) * (n * syy - sy * sy))


def naive_ranks(x):
    """Average ranks by pairwise counting: 1 + (#smaller) + (#ties - 1)/2."""
    out = []
    for v in x:
        smaller = sum(1 for u in x if u < v)
        ties = sum(1 for u in x if u == v)
        out.append(1.0 + smaller + (ties - 1) / 2.0)
    return out


class TestRoundClip:
    def test_clips_high(self):
        assert round_clip(4.7) == 4

    def test_half_rounds_up(self):
        assert round_clip(2.5) == 3

    def test_clips_low(self):
        assert round_clip(0.2) == 1

    @pytest.mark.parametrize("value,expected", [(1.49, 1), (1.5, 2), (3.49, 3), (9.0, 4), (-2.0, 1)])
    def test_misc(self, value, expected):
        assert round_clip(value) == expected

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            round_clip(float("nan"))


class TestPearson:
    def test_perfect_linear(self):
        x = [1.0, 2.0, 3.0, 4.0]
        assert pearson_lcc(x, [2 * v + 1 for v in x]) == pytest.approx(1.0, abs=1e-12)

    def test_anti_linear(self):
        x = [0.5, 1.5, -2.0]
        assert pearson_lcc(x, [-v for v in x]) == pytest.approx(-1.0, abs=1e-12)

    def test_hand_case(self):
        # closed form gives cov 4, variances 5 and 5 -> r = 4/5
        assert pearson_lcc([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)

    def test_matches_naive_form(self, rng):
        for _ in range(50):
            n = int(rng.integers(3, 40))
            x = rng.normal(size=n)
            y = rng.normal(size=n)
            assert pearson_lcc(x, y) == pytest.approx(naive_pearson(x, y), abs=1e-10)

    def test_constant_undefined(self):
        with pytest.raises(UndefinedCorrelationError):
            pearson_lcc([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_too_short(self):
        with pytest.raises(UndefinedCorrelationError):
            pearson_lcc([1.0], [2.0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            pearson_lcc([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_affine_invariance(self, rng):
        x = rng.normal(size=30)
        y = rng.normal(size=30)
        base = pearson_lcc(x, y)
        assert pearson_lcc(3.0 * x + 11.0, y) == pytest.approx(base, abs=1e-12)
        assert pearson_lcc(x, 0.25 * y - 4.0) == pytest.approx(base, abs=1e-12)


class TestSpearman:
    def test_monotone_map(self):
        x = [0.3, 2.0, -1.0, 5.0]
        y = [math.exp(v) for v in x]
        assert spearman_srcc(x, y) == pytest.approx(1.0, abs=1e-12)

    def test_reversed(self):
        x = [1.0, 2.0, 3.0, 4.0]
        assert spearman_srcc(x, x[::-1]) == pytest.approx(-1.0, abs=1e-12)

    def test_tie_hand_case(self):
        # ranks of x become [1.5, 1.5, 3]; pearson with [1,2,3] = 1.5/sqrt(1.5*2)
        expected = 1.5 / math.sqrt(3.0)
        assert spearman_srcc([1, 1, 2], [1, 2, 3]) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.866, abs=5e-4)

    def test_rank_average_matches_naive(self, rng):
        for _ in range(30):
            x = rng.integers(0, 6, size=int(rng.integers(2, 25))).astype(float)
            assert np.allclose(rank_average(x), naive_ranks(x))

    def test_equals_lcc_of_ranks(self, rng):
        for _ in range(20):
            x = rng.integers(0, 5, size=15).astype(float)
            y = rng.normal(size=15)
            assert spearman_srcc(x, y) == pearson_lcc(rank_average(x), rank_average(y))


def make_group(pair_id, system_id, scores):
    from svsnet.signal_io import PairRecord, group_by_pair

    records = [
        PairRecord(pair_id=pair_id, system_id=system_id, test_path="t.wav", ref_path="r.wav", score=s, split="test")
        for s in scores
    ]
    return group_by_pair(records)[0]


class TestEvaluateUtterance:
    def test_perfect(self):
        groups = [make_group(f"p{i}", "A", [s]) for i, s in enumerate([1, 2, 3, 4, 2])]
        preds = {g.pair_id: g.mean_score for g in groups}
        report = evaluate_utterance(preds, groups)
        assert report.acc == 1.0
        assert report.lcc == pytest.approx(1.0, abs=1e-12)
        assert report.srcc == pytest.approx(1.0, abs=1e-12)
        assert report.mse == 0.0
        assert report.n == 5

    def test_shifted(self):
        groups = [make_group(f"p{i}", "A", [s]) for i, s in enumerate([1, 2, 3, 4])]
        preds = {g.pair_id: g.mean_score + 0.5 for g in groups}
        report = evaluate_utterance(preds, groups)
        assert report.lcc == pytest.approx(1.0, abs=1e-12)
        assert report.mse == pytest.approx(0.25, abs=1e-12)

    def test_single_pair_correlation_undefined(self):
        groups = [make_group("p0", "A", [3])]
        report = evaluate_utterance({"p0": 3.0}, groups)
        assert report.lcc is None
        assert report.srcc is None
        assert report.mse == 0.0

    def test_classification_acc_uses_majority(self):
        g = make_group("p0", "A", [2, 2, 3])
        g2 = make_group("p1", "A", [4, 1])  # tie -> majority 1
        report = evaluate_utterance({"p0": 2, "p1": 1}, [g, g2], mode="classification")
        assert report.acc == 1.0

    def test_missing_prediction(self):
        groups = [make_group("p0", "A", [2])]
        with pytest.raises(ValueError, match="missing"):
            evaluate_utterance({}, groups)


class TestEvaluateSystem:
    def test_pair_average_and_perfect_correlation(self):
        ga = [make_group("p0", "A", [2]), make_group("p1", "A", [4])]
        gb = [make_group("p2", "B", [1]), make_group("p3", "B", [2])]
        preds = {"p0": 2.0, "p1": 4.0, "p2": 1.0, "p3": 2.0}
        report = evaluate_system(preds, ga + gb)
        # system truth means: A = 3.0, B = 1.5; predictions identical
        assert report.lcc == pytest.approx(1.0, abs=1e-12)
        assert report.mse == 0.0
        assert report.acc is None
        assert report.n == 2

    def test_pair_order_irrelevant(self):
        ga = [make_group("p0", "A", [2]), make_group("p1", "A", [4])]
        gb = [make_group("p2", "B", [1]), make_group("p3", "B", [3])]
        preds = {"p0": 1.0, "p1": 2.0, "p2": 3.0, "p3": 1.5}
        r1 = evaluate_system(preds, ga + gb)
        r2 = evaluate_system(preds, list(reversed(ga + gb)))
        assert r1 == r2

    def test_needs_two_systems(self):
        groups = [make_group("p0", "A", [2]), make_group("p1", "A", [3])]
        with pytest.raises(ValueError, match="2 systems"):
            evaluate_system({"p0": 2.0, "p1": 3.0}, groups)


def test_report_format_lines():
    report = MetricReport(level="utterance", acc=0.5, lcc=None, srcc=0.25, mse=1.0, n=7)
    lines = report.format_lines()
    assert any("undefined" in ln for ln in lines)
    assert lines[0].startswith("level: utterance")
