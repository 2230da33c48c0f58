"""Group-relative advantage normalization, token advantage sheets, and the
masked clipped+KL objective value.

No gradients here: the advantage sheets and objective are exported for an
external trainer to consume.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import exp, fsum, sqrt
from typing import TYPE_CHECKING, Iterator

from .errors import ArrError, IoFailure
from .protocol import REASONER, Segment, TokenSample, VERIFIER
from .reward import RewardBreakdown, RewardConfig, breakdown_to_dict

if TYPE_CHECKING:
    from .dialogue import GroupRollout, Trace

BATCH_SCHEMA = "arr-batch/1"

_DEGENERATE_STD = 1e-8


class GroupTooSmall(ArrError):
    """Group normalization needs at least two rollouts."""


class EmptyMask(ArrError):
    """No unmasked tokens to average over."""


def group_normalize(rewards: list[float]) -> list[float]:
    """(r - mean) / population std; an all-equal group maps to zeros."""
    values = list(rewards)
    size = len(values)
    if size < 2:
        raise GroupTooSmall("group too small")
    mean = fsum(values) / size
    std = sqrt(fsum((v - mean) ** 2 for v in values) / size)
    if std < _DEGENERATE_STD:
        return [0.0] * size
    return [(v - mean) / std for v in values]


@dataclass
class AgentTokenSheet:
    values: list[float] = field(default_factory=list)
    loss_mask: list[bool] = field(default_factory=list)


@dataclass
class TokenAdvantageSheet:
    reasoner: AgentTokenSheet = field(default_factory=AgentTokenSheet)
    verifier: AgentTokenSheet = field(default_factory=AgentTokenSheet)

    def for_agent(self, agent: str) -> AgentTokenSheet:
        return self.reasoner if agent == REASONER else self.verifier


def agent_token_stream(trace: "Trace", agent: str) -> Iterator[tuple[Segment, TokenSample]]:
    """The agent's token stream: every token of every segment in its steps,
    including environment injections (which the loss mask excludes)."""
    for step in trace.steps:
        if step.agent != agent:
            continue
        for segment in step.segments:
            for token in segment.tokens:
                yield segment, token


def assemble_token_advantages(
    trace: "Trace",
    breakdown: RewardBreakdown,
    base_adv_r: float,
    base_adv_v: float,
    cfg: RewardConfig,
) -> TokenAdvantageSheet:
    """Token-level advantages for both agents of one trace.

    Reasoner tokens carry the base advantage uniformly. Verifier tokens
    carry the base advantage plus that step's process advantage on tokens
    inside credited segment kinds. The loss mask is true exactly on the
    agent's own policy-generated tokens.
    """
    sheet = TokenAdvantageSheet()
    proc_by_step: list[float] = list(breakdown.proc_adv_per_verifier_step)
    verifier_step_index = -1
    for step in trace.steps:
        agent_sheet = sheet.for_agent(step.agent)
        if step.agent == VERIFIER:
            verifier_step_index += 1
            proc = (
                proc_by_step[verifier_step_index]
                if verifier_step_index < len(proc_by_step)
                else 0.0
            )
        for segment in step.segments:
            if step.agent == REASONER:
                value = base_adv_r
            else:
                credited = (
                    segment.origin == VERIFIER
                    and segment.kind in cfg.credited_verifier_kinds
                )
                value = base_adv_v + (proc if credited else 0.0)
            for token in segment.tokens:
                agent_sheet.values.append(value)
                agent_sheet.loss_mask.append(
                    segment.origin == step.agent and token.policy_generated
                )
    return sheet


@dataclass
class GrpoInputs:
    new_logprobs: list[float]
    old_logprobs: list[float]
    ref_logprobs: list[float]
    advantages: list[float]
    mask: list[bool]
    epsilon: float = 0.2
    beta: float = 0.0

    def __post_init__(self):
        n = len(self.advantages)
        for name in ("new_logprobs", "old_logprobs", "ref_logprobs", "mask"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length differs from advantages length")


def grpo_objective(inputs: GrpoInputs) -> float:
    """Mean over unmasked tokens of the clipped surrogate minus the KL penalty.

    The KL penalty uses the non-negative estimator exp(d) - d - 1 with
    d = ref_logprob - new_logprob.
    """
    terms = []
    for i, advantage in enumerate(inputs.advantages):
        if not inputs.mask[i]:
            continue
        ratio = exp(inputs.new_logprobs[i] - inputs.old_logprobs[i])
        clipped = min(max(ratio, 1.0 - inputs.epsilon), 1.0 + inputs.epsilon)
        surrogate = min(ratio * advantage, clipped * advantage)
        diff = inputs.ref_logprobs[i] - inputs.new_logprobs[i]
        kl = exp(diff) - diff - 1.0
        terms.append(surrogate - inputs.beta * kl)
    if not terms:
        raise EmptyMask("no unmasked tokens")
    return fsum(terms) / len(terms)


def build_batch_records(group: "GroupRollout", sheets: list[TokenAdvantageSheet]) -> list[dict]:
    """One arr-batch/1 record per (trace, agent), aligned to the token stream."""
    records = []
    for index, (trace, sheet, breakdown) in enumerate(
        zip(group.traces, sheets, group.breakdowns)
    ):
        for agent in (REASONER, VERIFIER):
            agent_sheet = sheet.for_agent(agent)
            stream = list(agent_token_stream(trace, agent))
            if len(stream) != len(agent_sheet.values):
                raise ValueError("advantage sheet is not aligned to the token stream")
            records.append(
                {
                    "schema": BATCH_SCHEMA,
                    "query_id": group.query_id,
                    "trace_index": index,
                    "agent": agent,
                    "tokens": [token.text for _, token in stream],
                    "logprobs": [token.logprob for _, token in stream],
                    "advantages": list(agent_sheet.values),
                    "mask": list(agent_sheet.loss_mask),
                    "reward": breakdown_to_dict(breakdown),
                }
            )
    return records


def export_training_batch(
    group: "GroupRollout", sheets: list[TokenAdvantageSheet], path: str
) -> None:
    """Write one group's records as JSONL (floats keep full precision)."""
    records = build_batch_records(group, sheets)
    try:
        with open(path, "w", encoding="utf-8") as handle:
            for record in records:
                handle.write(json.dumps(record) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write batch {path}: {exc}") from exc
