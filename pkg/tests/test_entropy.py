from __future__ import annotations

import csv
import itertools
import math
import random

import mpmath
import pytest

from arr.entropy import (
    EntropyPattern,
    NoPolicyTokens,
    ProbabilityOverflow,
    Trend,
    WrongLength,
    action_entropy,
    aggregate_patterns,
    classify_pattern,
    classify_trend,
    collect_action_entropies,
    entropy_from_logprobs,
    token_entropy,
)
from arr.llm_gateway import synth_tokens
from arr.protocol import REASONER, Segment, SegmentKind, TokenSample

from .conftest import think_trace

P = EntropyPattern


def sample_from_probs(probs: list[float]) -> TokenSample:
    pairs = sorted(
        ((f"t{i}", math.log(p)) for i, p in enumerate(probs)), key=lambda x: x[1], reverse=True
    )
    return TokenSample("t", pairs[0][1], list(pairs))


def mpmath_entropy(logprobs: list[float]) -> float:
    """High-precision reference: exact summation over masses plus the tail."""
    with mpmath.workdps(60):
        probs = [mpmath.exp(mpmath.mpf(lp)) for lp in logprobs]
        total = mpmath.fsum(probs)
        value = -mpmath.fsum(p * mpmath.log(p) for p in probs if p > 0)
        rest = max(mpmath.mpf(0), 1 - total)
        if rest >= mpmath.mpf("1e-12"):
            value -= rest * mpmath.log(rest)
        return float(value)


class TestTokenEntropy:
    def test_deterministic_token(self):
        assert token_entropy(sample_from_probs([1.0])) == 0.0

    def test_uniform_two_outcomes(self):
        value = token_entropy(sample_from_probs([0.5, 0.5]))
        assert value == pytest.approx(math.log(2), abs=1e-12)

    def test_topk_with_tail_mass(self):
        # masses 0.5, 0.25, 0.125 observed; 0.125 left in the tail
        value = token_entropy(sample_from_probs([0.5, 0.25, 0.125]))
        assert value == pytest.approx(1.75 * math.log(2), abs=1e-12)

    def test_matches_high_precision_reference(self):
        rng = random.Random(42)
        for _ in range(500):
            k = rng.randint(1, 6)
            raw = [rng.random() for _ in range(k)]
            scale = rng.uniform(0.2, 1.0) / sum(raw)
            logprobs = sorted((math.log(r * scale) for r in raw), reverse=True)
            value = entropy_from_logprobs(logprobs)
            assert value == pytest.approx(mpmath_entropy(logprobs), abs=1e-12)

    def test_overflow(self):
        with pytest.raises(ProbabilityOverflow):
            entropy_from_logprobs([math.log(0.7), math.log(0.7)])

    def test_nonnegative_and_zero_iff_deterministic(self):
        rng = random.Random(5)
        for _ in range(200):
            raw = [rng.random() for _ in range(rng.randint(1, 4))]
            scale = rng.uniform(0.1, 1.0) / sum(raw)
            value = entropy_from_logprobs(math.log(r * scale) for r in raw)
            assert value >= 0.0
        assert entropy_from_logprobs([0.0]) == 0.0

    def test_no_alternatives(self):
        with pytest.raises(NoPolicyTokens):
            token_entropy(TokenSample("x", -0.1, []))


class TestActionEntropy:
    def test_deterministic_segment(self):
        segment = Segment(SegmentKind.THINK, "sure", synth_tokens("sure", 1.0), REASONER)
        assert action_entropy(segment) == 0.0

    def test_mean_of_token_entropies(self):
        tokens = [sample_from_probs([0.5, 0.5]), sample_from_probs([1.0])]
        segment = Segment(SegmentKind.THINK, "tt", tokens, REASONER)
        assert action_entropy(segment) == pytest.approx(math.log(2) / 2, abs=1e-12)

    def test_matches_brute_force_mean(self):
        rng = random.Random(9)
        tokens = []
        for _ in range(10):
            raw = [rng.random() for _ in range(3)]
            scale = rng.uniform(0.3, 1.0) / sum(raw)
            tokens.append(sample_from_probs(sorted((r * scale for r in raw), reverse=True)))
        segment = Segment(SegmentKind.THINK, "x" * 10, tokens, REASONER)
        expected = math.fsum(
            mpmath_entropy([lp for _, lp in t.top_alternatives]) for t in tokens
        ) / len(tokens)
        assert action_entropy(segment) == pytest.approx(expected, abs=1e-12)

    def test_env_tokens_are_ignored(self):
        tokens = [sample_from_probs([0.5, 0.5])]
        env = TokenSample("pad", 0.0, [], policy_generated=False)
        segment = Segment(SegmentKind.THINK, "pad t", [env, *tokens], REASONER)
        assert action_entropy(segment) == pytest.approx(math.log(2), abs=1e-12)

    def test_no_policy_tokens(self):
        with pytest.raises(NoPolicyTokens):
            action_entropy(Segment(SegmentKind.THINK, "x", [], REASONER))


class TestTrend:
    def test_increase(self):
        assert classify_trend(0.06, 0.05) is Trend.INCREASE

    def test_boundary_is_flat(self):
        assert classify_trend(-0.05, 0.05) is Trend.FLAT
        assert classify_trend(0.05, 0.05) is Trend.FLAT

    def test_zero_threshold(self):
        assert classify_trend(0.0, 0.0) is Trend.FLAT
        assert classify_trend(1e-9, 0.0) is Trend.INCREASE

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            classify_trend(0.1, -0.01)


DELTA = 0.05
# step sizes producing each trend at threshold 0.05
MOVES = {Trend.INCREASE: 0.2, Trend.DECREASE: -0.2, Trend.FLAT: 0.01}
EXPECTED = {
    (Trend.DECREASE, Trend.DECREASE): P.D,
    (Trend.DECREASE, Trend.FLAT): P.D,
    (Trend.FLAT, Trend.DECREASE): P.D,
    (Trend.INCREASE, Trend.INCREASE): P.I,
    (Trend.INCREASE, Trend.FLAT): P.I,
    (Trend.FLAT, Trend.INCREASE): P.I,
    (Trend.FLAT, Trend.FLAT): P.F,
    (Trend.DECREASE, Trend.INCREASE): P.DI,
    (Trend.INCREASE, Trend.DECREASE): P.ID,
}


class TestPattern:
    def test_monotone_decrease(self):
        assert classify_pattern([0.9, 0.7, 0.4], DELTA) is P.D

    def test_increase_then_decrease(self):
        assert classify_pattern([0.4, 0.7, 0.3], DELTA) is P.ID

    def test_flat(self):
        assert classify_pattern([0.5, 0.5, 0.5], DELTA) is P.F

    def test_exhaustive_trend_table(self):
        for (first, second), expected in EXPECTED.items():
            start = 1.0
            middle = start + MOVES[first]
            end = middle + MOVES[second]
            assert classify_pattern([start, middle, end], DELTA) is expected, (first, second)

    def test_shift_invariance(self):
        rng = random.Random(21)
        for _ in range(100):
            values = [rng.uniform(0.0, 2.0) for _ in range(3)]
            shift = rng.uniform(-5.0, 5.0)
            assert classify_pattern(values, DELTA) is classify_pattern(
                [v + shift for v in values], DELTA
            )

    def test_wrong_length(self):
        with pytest.raises(WrongLength):
            classify_pattern([0.1, 0.2], DELTA)


# confidence schedules inducing a pattern (confidence up = entropy down)
D_CONFS = [0.55, 0.75, 0.95]
I_CONFS = [0.95, 0.75, 0.55]


class TestAggregate:
    def test_known_mixture(self, tmp_path):
        samples = [(think_trace(D_CONFS), True) for _ in range(5)]
        samples += [(think_trace(I_CONFS), False) for _ in range(5)]
        csv_path = tmp_path / "patterns.csv"
        stats = aggregate_patterns(samples, delta=DELTA, csv_path=str(csv_path))
        assert len(stats) == 1
        stat = stats[0]
        assert stat.sample_count == 10
        assert stat.proportion_per_pattern == {P.D: 0.5, P.I: 0.5}
        assert stat.accuracy_per_pattern == {P.D: 1.0, P.I: 0.0}
        with open(csv_path) as handle:
            rows = list(csv.DictReader(handle))
        assert {row["pattern"] for row in rows} == {"D", "I"}
        assert math.fsum(float(row["proportion"]) for row in rows) == pytest.approx(1.0)

    def test_short_traces_are_skipped(self):
        samples = [(think_trace([0.9, 0.8]), True) for _ in range(4)]
        assert aggregate_patterns(samples, delta=DELTA) == []

    def test_proportions_sum_to_one(self):
        rng = random.Random(17)
        schedules = [D_CONFS, I_CONFS, [0.7, 0.7, 0.7], [0.55, 0.9, 0.7]]
        samples = [
            (think_trace(rng.choice(schedules)), rng.random() < 0.5) for _ in range(30)
        ]
        for stat in aggregate_patterns(samples, delta=DELTA):
            assert math.fsum(stat.proportion_per_pattern.values()) == pytest.approx(
                1.0, abs=1e-9
            )

    def test_bucket_key(self):
        samples = [(think_trace(D_CONFS), True), (think_trace(I_CONFS), False)]
        stats = aggregate_patterns(samples, bucket_key=lambda t: t.query_id, delta=DELTA)
        assert [s.bucket_label for s in stats] == ["fixture"]

    def test_collect_orders_by_step(self):
        trace = think_trace([0.55, 0.75, 0.95])
        values = [e.value for e in collect_action_entropies(trace, {SegmentKind.THINK})]
        assert values == sorted(values, reverse=True)
        assert all(e.kind is SegmentKind.THINK for e in collect_action_entropies(trace, {SegmentKind.THINK}))
