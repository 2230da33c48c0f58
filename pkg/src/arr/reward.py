"""Adversarial outcome rewards and the process-aware verifier advantage.

Each agent's outcome reward is its answer F1 plus a bonus for beating the
counterpart by at least one F1 bucket. The verifier additionally earns a
per-step process advantage: reasoner correctness x critique clarity x
impact on the reasoner's entropy trajectory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import exp, floor, fsum
from typing import TYPE_CHECKING, Iterable, Mapping

from .entropy import (
    EntropyPattern,
    NoPolicyTokens,
    action_entropy,
    classify_pattern,
    collect_action_entropies,
)
from .errors import ArrError, IoFailure
from .metrics import contains_gold, em, f1
from .protocol import REASONER, SegmentKind, VERIFIER

if TYPE_CHECKING:
    from .dialogue import Step, Trace
    from .retrieval import Document

TERM_PROTOCOL_ERROR = "protocol_error"

DEFAULT_PATTERN_SCORES = {
    EntropyPattern.D: 1.0,
    EntropyPattern.ID: 0.8,
    EntropyPattern.F: 0.6,
    EntropyPattern.DI: 0.4,
    EntropyPattern.I: 0.2,
}


class NoCreditedSegments(ArrError):
    """The verifier step has no credited segments carrying policy tokens."""


@dataclass
class RewardConfig:
    """All knobs of the reward scheme plus the rollout constants.

    In configuration files the keys match these names, with the bonus
    weight spelled ``lambda``.
    """

    lambda_: float = 0.5
    n_buckets: int = 4
    delta: float = 0.05
    pattern_scores: dict[EntropyPattern, float] = field(
        default_factory=lambda: dict(DEFAULT_PATTERN_SCORES)
    )
    monitored_reasoner_kinds: frozenset[SegmentKind] = frozenset({SegmentKind.THINK})
    credited_verifier_kinds: frozenset[SegmentKind] = frozenset(
        {SegmentKind.VERIFY, SegmentKind.RESPONSE}
    )
    max_turns: int = 5
    top_k: int = 3
    group_size: int = 5
    epsilon_clip: float = 0.2
    beta_kl: float = 1e-3

    def __post_init__(self):
        if self.lambda_ < 0:
            raise ValueError("lambda must be >= 0")
        if self.n_buckets < 1:
            raise ValueError("n_buckets must be >= 1")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if set(self.pattern_scores) != set(EntropyPattern):
            raise ValueError("pattern_scores must cover exactly the five patterns")
        if any(not 0.0 <= s <= 1.0 for s in self.pattern_scores.values()):
            raise ValueError("pattern scores must lie in [0, 1]")

    @classmethod
    def from_mapping(cls, mapping: Mapping) -> "RewardConfig":
        kwargs = {}
        if "lambda" in mapping:
            kwargs["lambda_"] = float(mapping["lambda"])
        for key in ("n_buckets", "max_turns", "top_k", "group_size"):
            if key in mapping:
                kwargs[key] = int(mapping[key])
        for key in ("delta", "epsilon_clip", "beta_kl"):
            if key in mapping:
                kwargs[key] = float(mapping[key])
        if "pattern_scores" in mapping:
            kwargs["pattern_scores"] = {
                EntropyPattern(name): float(score)
                for name, score in mapping["pattern_scores"].items()
            }
        if "monitored_reasoner_kinds" in mapping:
            kwargs["monitored_reasoner_kinds"] = frozenset(
                SegmentKind(name) for name in mapping["monitored_reasoner_kinds"]
            )
        if "credited_verifier_kinds" in mapping:
            kwargs["credited_verifier_kinds"] = frozenset(
                SegmentKind(name) for name in mapping["credited_verifier_kinds"]
            )
        return cls(**kwargs)


def load_reward_config(path: str) -> RewardConfig:
    """Read a RewardConfig from a flat JSON key-value file."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            mapping = json.load(handle)
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    return RewardConfig.from_mapping(mapping)


@dataclass
class RewardBreakdown:
    f1_r: float = 0.0
    f1_v: float = 0.0
    em_r: float = 0.0
    em_v: float = 0.0
    bonus_r: float = 0.0
    bonus_v: float = 0.0
    r_r: float = 0.0
    r_v: float = 0.0
    clarity_per_verifier_step: list[float] = field(default_factory=list)
    impact: float = 0.0
    proc_adv_per_verifier_step: list[float] = field(default_factory=list)


def breakdown_to_dict(breakdown: RewardBreakdown) -> dict:
    return {
        "f1_r": breakdown.f1_r,
        "f1_v": breakdown.f1_v,
        "em_r": breakdown.em_r,
        "em_v": breakdown.em_v,
        "bonus_r": breakdown.bonus_r,
        "bonus_v": breakdown.bonus_v,
        "r_r": breakdown.r_r,
        "r_v": breakdown.r_v,
        "clarity_per_verifier_step": list(breakdown.clarity_per_verifier_step),
        "impact": breakdown.impact,
        "proc_adv_per_verifier_step": list(breakdown.proc_adv_per_verifier_step),
    }


def breakdown_from_dict(record: Mapping) -> RewardBreakdown:
    return RewardBreakdown(
        f1_r=float(record["f1_r"]),
        f1_v=float(record["f1_v"]),
        em_r=float(record["em_r"]),
        em_v=float(record["em_v"]),
        bonus_r=float(record["bonus_r"]),
        bonus_v=float(record["bonus_v"]),
        r_r=float(record["r_r"]),
        r_v=float(record["r_v"]),
        clarity_per_verifier_step=[float(x) for x in record["clarity_per_verifier_step"]],
        impact=float(record["impact"]),
        proc_adv_per_verifier_step=[float(x) for x in record["proc_adv_per_verifier_step"]],
    )


def bin_diff(x: float, n: int) -> float:
    """Snap x to the lower edge of its 1/n-wide bucket (odd symmetric).

    Differences smaller than one bucket map to zero, filtering minor gaps.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if x < 0:
        return -bin_diff(-x, n)
    return floor(x * n) / n


def adversarial_outcome(f1_self: float, f1_other: float, cfg: RewardConfig) -> float:
    """Own F1 plus a bucketed bonus for outperforming the counterpart."""
    margin = max(bin_diff(f1_self - f1_other, cfg.n_buckets), 0.0)
    return f1_self + cfg.lambda_ * margin


def clarity(
    verifier_step: "Step",
    docs_this_turn: Iterable["Document"],
    golds: list[str],
    cfg: RewardConfig,
) -> float:
    """Confidence x evidence-support x faithfulness for one verifier step.

    exp(-H) over the step's credited segments, zeroed when no retrieved
    document actually contains a gold answer, and negated when the credited
    text filtered the gold answer out.
    """
    credited = [
        seg
        for seg in verifier_step.segments
        if seg.origin == VERIFIER and seg.kind in cfg.credited_verifier_kinds
    ]
    entropies = []
    for seg in credited:
        try:
            entropies.append(action_entropy(seg))
        except NoPolicyTokens:
            continue
    if not entropies:
        raise NoCreditedSegments("no credited segments with policy tokens")
    mean_entropy = fsum(entropies) / len(entropies)

    doc_text = " ".join(doc.text for doc in docs_this_turn)
    if not contains_gold(doc_text, golds):
        return 0.0
    credited_text = " ".join(seg.text for seg in credited)
    sign = 1.0 if contains_gold(credited_text, golds) else -1.0
    return exp(-mean_entropy) * sign


def impact_from_entropies(
    entropies_by_kind: Mapping[object, list[float]],
    delta: float,
    pattern_scores: Mapping[EntropyPattern, float] | None = None,
) -> float:
    """Mean pattern score over monitored action kinds.

    A kind with fewer than three observations scores as Flat (neutral).
    """
    scores = pattern_scores if pattern_scores is not None else DEFAULT_PATTERN_SCORES
    values = []
    for seq in entropies_by_kind.values():
        if len(seq) < 3:
            values.append(scores[EntropyPattern.F])
        else:
            values.append(scores[classify_pattern(list(seq[-3:]), delta)])
    if not values:
        return scores[EntropyPattern.F]
    return fsum(values) / len(values)


def impact(trace: "Trace", cfg: RewardConfig) -> float:
    """Pattern score of the reasoner's monitored entropy trajectories."""
    sequences = {
        kind: [e.value for e in collect_action_entropies(trace, {kind}, REASONER)]
        for kind in sorted(cfg.monitored_reasoner_kinds, key=lambda k: k.value)
    }
    return impact_from_entropies(sequences, cfg.delta, cfg.pattern_scores)


def combine_process_advantage(
    f1_r: float, clarity_values: list[float], impact_value: float
) -> list[float]:
    return [f1_r * c * impact_value for c in clarity_values]


def process_advantage(trace: "Trace", cfg: RewardConfig) -> RewardBreakdown:
    """Fill the process fields (and f1_r) of a fresh RewardBreakdown.

    Steps whose clarity is undefined (no credited policy tokens) contribute
    zero clarity so the trace stays scoreable.
    """
    breakdown = RewardBreakdown()
    if trace.reasoner_answer is not None:
        breakdown.f1_r = f1(trace.reasoner_answer, trace.gold_answers)
    breakdown.impact = impact(trace, cfg)

    docs_by_turn = {event.turn: event.documents for event in trace.retrievals}
    clarity_values = []
    for step in trace.steps:
        if step.agent != VERIFIER:
            continue
        docs = docs_by_turn.get(step.turn, [])
        try:
            clarity_values.append(clarity(step, docs, trace.gold_answers, cfg))
        except NoCreditedSegments:
            clarity_values.append(0.0)
    breakdown.clarity_per_verifier_step = clarity_values
    breakdown.proc_adv_per_verifier_step = combine_process_advantage(
        breakdown.f1_r, clarity_values, breakdown.impact
    )
    return breakdown


def score_trace(trace: "Trace", cfg: RewardConfig) -> RewardBreakdown:
    """Full scoring: F1/EM, adversarial outcomes, and process fields.

    Missing answers score zero; a protocol violation zeroes the offending
    agent's total reward.
    """
    breakdown = process_advantage(trace, cfg)
    golds = trace.gold_answers
    if trace.reasoner_answer is not None:
        breakdown.em_r = float(em(trace.reasoner_answer, golds))
    if trace.verifier_answer is not None:
        breakdown.f1_v = f1(trace.verifier_answer, golds)
        breakdown.em_v = float(em(trace.verifier_answer, golds))

    breakdown.bonus_r = cfg.lambda_ * max(
        bin_diff(breakdown.f1_r - breakdown.f1_v, cfg.n_buckets), 0.0
    )
    breakdown.bonus_v = cfg.lambda_ * max(
        bin_diff(breakdown.f1_v - breakdown.f1_r, cfg.n_buckets), 0.0
    )
    breakdown.r_r = breakdown.f1_r + breakdown.bonus_r
    breakdown.r_v = breakdown.f1_v + breakdown.bonus_v

    if trace.termination == TERM_PROTOCOL_ERROR:
        if trace.offender == REASONER:
            breakdown.bonus_r = 0.0
            breakdown.r_r = 0.0
        elif trace.offender == VERIFIER:
            breakdown.bonus_v = 0.0
            breakdown.r_v = 0.0
    return breakdown
