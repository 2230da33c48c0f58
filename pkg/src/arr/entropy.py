"""Token and action entropy, trend thresholding, and the five-pattern classifier.

Entropies are in nats. A token's distribution is reconstructed from its
top-k alternative log-probabilities; the unobserved tail is folded into a
single pseudo-outcome.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from math import exp, fsum, log
from typing import TYPE_CHECKING, Callable, Iterable, Mapping

from .errors import ArrError
from .protocol import REASONER, Segment, SegmentKind, TokenSample

if TYPE_CHECKING:
    from .dialogue import Trace

_REST_EPS = 1e-12
_OVERFLOW_EPS = 1e-6

DEFAULT_DELTA = 0.05
DEFAULT_MONITORED_KINDS = frozenset({SegmentKind.THINK})


class ProbabilityOverflow(ArrError):
    """Alternative probabilities sum to more than one."""


class NoPolicyTokens(ArrError):
    """The segment has no policy tokens with alternatives to average over."""


class WrongLength(ArrError):
    """Pattern classification needs exactly three entropy values."""


class Trend(Enum):
    INCREASE = "increase"
    DECREASE = "decrease"
    FLAT = "flat"


class EntropyPattern(str, Enum):
    D = "D"
    ID = "ID"
    F = "F"
    DI = "DI"
    I = "I"


def entropy_from_logprobs(logprobs: Iterable[float]) -> float:
    """Entropy of a truncated distribution given top-k log-probabilities.

    The remaining mass ``1 - sum(exp(lp))`` is treated as one extra outcome;
    below 1e-12 it contributes nothing.
    """
    probs = [exp(lp) for lp in logprobs]
    total = fsum(probs)
    if total > 1.0 + _OVERFLOW_EPS:
        raise ProbabilityOverflow(f"probabilities sum to {total}")
    value = -fsum(p * log(p) for p in probs if p > 0.0)
    rest = max(0.0, 1.0 - total)
    if rest >= _REST_EPS:
        value -= rest * log(rest)
    return value


def token_entropy(sample: TokenSample) -> float:
    """Entropy of one token's policy distribution."""
    if not sample.top_alternatives:
        raise NoPolicyTokens("token has no alternatives")
    return entropy_from_logprobs(lp for _, lp in sample.top_alternatives)


def action_entropy(segment: Segment) -> float:
    """Mean token entropy over a segment's policy-generated tokens."""
    values = [
        token_entropy(tok)
        for tok in segment.tokens
        if tok.policy_generated and tok.top_alternatives
    ]
    if not values:
        raise NoPolicyTokens(f"segment <{segment.kind.value}> has no policy tokens")
    return fsum(values) / len(values)


def classify_trend(delta: float, threshold: float) -> Trend:
    """Increase / Decrease / Flat with the boundary inclusive to Flat."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    if delta > threshold:
        return Trend.INCREASE
    if delta < -threshold:
        return Trend.DECREASE
    return Trend.FLAT


_T = Trend
_PATTERN_TABLE: dict[tuple[Trend, Trend], EntropyPattern] = {
    (_T.DECREASE, _T.DECREASE): EntropyPattern.D,
    (_T.DECREASE, _T.FLAT): EntropyPattern.D,
    (_T.FLAT, _T.DECREASE): EntropyPattern.D,
    (_T.INCREASE, _T.INCREASE): EntropyPattern.I,
    (_T.INCREASE, _T.FLAT): EntropyPattern.I,
    (_T.FLAT, _T.INCREASE): EntropyPattern.I,
    (_T.FLAT, _T.FLAT): EntropyPattern.F,
    (_T.DECREASE, _T.INCREASE): EntropyPattern.DI,
    (_T.INCREASE, _T.DECREASE): EntropyPattern.ID,
}


def classify_pattern(entropies: list[float], threshold: float) -> EntropyPattern:
    """Map the last three action entropies to one of the five trend patterns."""
    if len(entropies) != 3:
        raise WrongLength(f"expected 3 entropy values, got {len(entropies)}")
    first = classify_trend(entropies[1] - entropies[0], threshold)
    second = classify_trend(entropies[2] - entropies[1], threshold)
    return _PATTERN_TABLE[(first, second)]


@dataclass
class ActionEntropy:
    step_turn: int
    agent: str
    kind: SegmentKind
    value: float


def collect_action_entropies(
    trace: "Trace",
    kinds: Iterable[SegmentKind],
    agent: str = REASONER,
) -> list[ActionEntropy]:
    """Action entropies of the agent's monitored segments, in step order.

    Segments without policy tokens (environment injections, or backends
    that returned no logprobs) are skipped.
    """
    wanted = frozenset(kinds)
    out: list[ActionEntropy] = []
    for step in trace.steps:
        if step.agent != agent:
            continue
        for seg in step.segments:
            if seg.origin != agent or seg.kind not in wanted:
                continue
            try:
                value = action_entropy(seg)
            except NoPolicyTokens:
                continue
            out.append(ActionEntropy(step.turn, agent, seg.kind, value))
    return out


@dataclass
class PatternStats:
    bucket_label: str
    proportion_per_pattern: dict[EntropyPattern, float]
    accuracy_per_pattern: dict[EntropyPattern, float]
    sample_count: int


def aggregate_patterns(
    samples: Iterable[tuple["Trace", bool]],
    bucket_key: Callable[["Trace"], str] | None = None,
    delta: float = DEFAULT_DELTA,
    monitored_kinds: frozenset[SegmentKind] = DEFAULT_MONITORED_KINDS,
    csv_path: str | None = None,
) -> list[PatternStats]:
    """Bucketed pattern proportions and per-pattern accuracy over traces.

    Only traces with at least three monitored actions are counted. When
    ``csv_path`` is given, rows (bucket, pattern, proportion, accuracy, n)
    are written as plot-ready CSV.
    """
    counts: dict[str, dict[EntropyPattern, int]] = {}
    correct: dict[str, dict[EntropyPattern, int]] = {}
    for trace, is_correct in samples:
        entropies = [e.value for e in collect_action_entropies(trace, monitored_kinds)]
        if len(entropies) < 3:
            continue
        pattern = classify_pattern(entropies[-3:], delta)
        bucket = bucket_key(trace) if bucket_key is not None else "all"
        bucket_counts = counts.setdefault(bucket, {})
        bucket_counts[pattern] = bucket_counts.get(pattern, 0) + 1
        bucket_correct = correct.setdefault(bucket, {})
        bucket_correct[pattern] = bucket_correct.get(pattern, 0) + int(is_correct)

    stats: list[PatternStats] = []
    for bucket in sorted(counts):
        by_pattern = counts[bucket]
        total = sum(by_pattern.values())
        ordered = [p for p in EntropyPattern if p in by_pattern]
        stats.append(
            PatternStats(
                bucket_label=bucket,
                proportion_per_pattern={p: by_pattern[p] / total for p in ordered},
                accuracy_per_pattern={p: correct[bucket][p] / by_pattern[p] for p in ordered},
                sample_count=total,
            )
        )

    if csv_path is not None:
        write_pattern_csv(stats, csv_path)
    return stats


def write_pattern_csv(stats: list[PatternStats], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["bucket", "pattern", "proportion", "accuracy", "n"])
        for stat in stats:
            for pattern, proportion in stat.proportion_per_pattern.items():
                n = round(proportion * stat.sample_count)
                writer.writerow(
                    [
                        stat.bucket_label,
                        pattern.value,
                        repr(proportion),
                        repr(stat.accuracy_per_pattern[pattern]),
                        n,
                    ]
                )
