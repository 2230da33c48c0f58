"""The reasoner-verifier dialogue state machine.

One loop iteration: the reasoner thinks and searches, the retriever fetches
documents, the verifier audits query and documents and replies, and the
reply is injected back to the reasoner as feedback. The loop ends when the
reasoner answers (the verifier then issues its final answer and a closing
generation pass over the whole history produces the evaluated answer), when
the turn cap is hit, or on a protocol/backend failure.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Union

from . import prompts
from .errors import ArrError
from .grpo import GroupTooSmall, group_normalize
from .llm_gateway import (
    GatewayError,
    GenerationBackend,
    GenerationRequest,
    GenerationResult,
)
from .protocol import (
    ENVIRONMENT,
    REASONER,
    VERIFIER,
    ProtocolError,
    Segment,
    SegmentKind,
    StepShape,
    TokenSample,
    _scan_spans,
    extract_answer,
    render_segment,
    validate_step,
)
from .retrieval import Document, EmptyQuery, RetrievalError, RetrievalEvent, Retriever
from .reward import RewardBreakdown, RewardConfig, score_trace

logger = logging.getLogger(__name__)

FINAL_GENERATOR = "final"

TERM_ANSWERED = "answered"
TERM_MAX_TURNS = "max_turns"
TERM_PROTOCOL_ERROR = "protocol_error"
TERM_BACKEND_FAILURE = "backend_failure"


class InconsistentPrefix(ArrError):
    """The trace prefix violates the alternation invariant."""


@dataclass
class GenSettings:
    max_tokens: int = 512
    temperature: float = 0.7
    top_logprobs_k: int = 5
    stop_sequences: tuple[str, ...] = ()


@dataclass
class Backends:
    """Generation and retrieval backends for one dialogue.

    The closing generation pass reuses the reasoner backend (same policy).
    """

    reasoner: GenerationBackend
    verifier: GenerationBackend
    retriever: Retriever
    settings: GenSettings = field(default_factory=GenSettings)


BackendsSource = Union[Backends, Callable[[int], Backends]]


@dataclass
class Step:
    turn: int
    agent: str
    segments: list[Segment]


@dataclass
class Trace:
    query_id: str
    question: str
    gold_answers: list[str]
    steps: list[Step] = field(default_factory=list)
    retrievals: list[RetrievalEvent] = field(default_factory=list)
    reasoner_answer: str | None = None
    verifier_answer: str | None = None
    final_answer: str | None = None
    termination: str = TERM_MAX_TURNS
    offender: str | None = None


@dataclass
class GroupRollout:
    query_id: str
    traces: list[Trace]
    breakdowns: list[RewardBreakdown]
    rewards_r: list[float]
    rewards_v: list[float]
    base_adv_r: list[float]
    base_adv_v: list[float]


class _Violation(Exception):
    """Internal carrier for a protocol violation attributed to one agent."""

    def __init__(self, agent: str, reason: str):
        super().__init__(reason)
        self.agent = agent


def render_document(doc: Document) -> str:
    return f"Doc {doc.rank}: {doc.title}. {doc.text}"


def render_information(query: str, documents: list[Document]) -> str:
    lines = [f"Query: {query}"]
    lines.extend(render_document(doc) for doc in documents)
    return "\n".join(lines)


def render_answer_information(answer: str) -> str:
    return f"The reasoner's answer: <answer>{answer}</answer>"


def _check_alternation(trace: Trace) -> None:
    expected = REASONER
    for step in trace.steps:
        if step.agent != expected:
            raise InconsistentPrefix(
                f"expected a {expected} step at turn {step.turn}, found {step.agent}"
            )
        expected = VERIFIER if expected == REASONER else REASONER


def build_context(
    trace_prefix: Trace,
    role: str,
    pending_information: str | None = None,
) -> list[tuple[str, str]]:
    """Messages for the next generation call of the given role.

    The reasoner sees its instruction prompt plus its own transcript with
    verifier replies as feedback blocks; the verifier sees its prompt plus
    its prior steps and the pending information block; the final generator
    sees the whole rendered trajectory.
    """
    _check_alternation(trace_prefix)
    question = trace_prefix.question

    if role == REASONER:
        rendered = [
            render_segment(seg)
            for step in trace_prefix.steps
            if step.agent == REASONER
            for seg in step.segments
        ]
        messages = [("system", prompts.reasoner_prompt(question))]
        if rendered:
            messages.append(("user", "\n".join(rendered)))
        return messages

    if role == VERIFIER:
        rendered = [
            render_segment(seg)
            for step in trace_prefix.steps
            if step.agent == VERIFIER
            for seg in step.segments
        ]
        if pending_information is not None:
            rendered.append(pending_information)
        messages = [("system", prompts.verifier_prompt(question))]
        if rendered:
            messages.append(("user", "\n".join(rendered)))
        return messages

    if role == FINAL_GENERATOR:
        trajectory = "\n".join(
            render_segment(seg) for step in trace_prefix.steps for seg in step.segments
        )
        return [("user", prompts.final_prompt(trajectory, question))]

    raise ValueError(f"unknown role {role!r}")


_ENV_CHUNK = 8


def environment_tokens(text: str) -> list[TokenSample]:
    """Placeholder tokens for injected text, excluded from any loss."""
    return [
        TokenSample(text[i : i + _ENV_CHUNK], 0.0, [], policy_generated=False)
        for i in range(0, len(text), _ENV_CHUNK)
    ]


def _segments_with_tokens(result: GenerationResult, role: str, strict: bool) -> list[Segment]:
    """Parse a generation result and attach tokens to segments by offsets.

    A token belongs to a segment when it lies fully inside the tag's inner
    span; tag markup (and any boundary-straddling token) stays unattached.
    """
    spans = _scan_spans(result.text, role, strict)
    segments = [Segment(kind=s.kind, text=s.text, origin=role) for s in spans]
    offsets = []
    position = 0
    for tok in result.tokens:
        offsets.append((position, position + len(tok.text), tok))
        position += len(tok.text)
    for span, segment in zip(spans, segments):
        segment.tokens = [
            tok
            for start, end, tok in offsets
            if start >= span.inner_start and end <= span.inner_end
        ]
    return segments


def _request(messages: list[tuple[str, str]], settings: GenSettings, seed: int | None):
    return GenerationRequest(
        messages=messages,
        max_tokens=settings.max_tokens,
        temperature=settings.temperature,
        top_logprobs_k=settings.top_logprobs_k,
        stop_sequences=settings.stop_sequences,
        seed=seed,
    )


def _agent_turn(
    backend: GenerationBackend,
    role: str,
    messages: list[tuple[str, str]],
    settings: GenSettings,
    seed: int | None,
    strict: bool,
) -> list[Segment]:
    result = backend.generate(_request(messages, settings, seed))
    try:
        return _segments_with_tokens(result, role, strict)
    except ProtocolError as exc:
        raise _Violation(role, str(exc)) from exc


def run_dialogue(
    question: str,
    golds: list[str],
    config: RewardConfig,
    backends: Backends,
    query_id: str = "query",
    seed: int | None = None,
    strict: bool = False,
) -> Trace:
    """Drive one full dialogue; always returns a recorded Trace."""
    trace = Trace(query_id=query_id, question=question, gold_answers=list(golds))
    settings = backends.settings
    awaiting_verify: Step | None = None
    try:
        for turn in range(1, config.max_turns + 1):
            segments = _agent_turn(
                backends.reasoner,
                REASONER,
                build_context(trace, REASONER),
                settings,
                seed,
                strict,
            )
            if (
                segments
                and segments[0].kind is SegmentKind.VERIFY
                and awaiting_verify is not None
            ):
                awaiting_verify.segments.append(segments.pop(0))
                awaiting_verify = None
            verdict = validate_step(segments, REASONER)
            if not verdict.ok:
                raise _Violation(REASONER, verdict.reason or "malformed step")
            step = Step(turn=turn, agent=REASONER, segments=segments)
            trace.steps.append(step)

            if verdict.shape is StepShape.COMPLETE_FINAL:
                trace.reasoner_answer = extract_answer(segments, REASONER)
                _verifier_final_turn(trace, turn, config, backends, seed, strict)
                final_messages = build_context(trace, FINAL_GENERATOR)
                final_result = backends.reasoner.generate(
                    _request(final_messages, settings, seed)
                )
                trace.final_answer = final_result.text.strip()
                trace.termination = TERM_ANSWERED
                return trace

            query = next(s for s in segments if s.kind is SegmentKind.SEARCH).text
            try:
                documents = backends.retriever.retrieve(query, config.top_k)
            except EmptyQuery as exc:
                raise _Violation(REASONER, str(exc)) from exc
            trace.retrievals.append(RetrievalEvent(turn=turn, query=query, documents=documents))

            info_text = render_information(query, documents)
            info_segment = Segment(
                SegmentKind.INFORMATION, info_text, environment_tokens(info_text), ENVIRONMENT
            )
            verifier_segments = _agent_turn(
                backends.verifier,
                VERIFIER,
                build_context(trace, VERIFIER, pending_information=render_segment(info_segment)),
                settings,
                seed,
                strict,
            )
            verifier_verdict = validate_step(verifier_segments, VERIFIER)
            if not verifier_verdict.ok:
                raise _Violation(VERIFIER, verifier_verdict.reason or "malformed step")
            if verifier_verdict.shape is StepShape.COMPLETE_FINAL:
                raise _Violation(VERIFIER, "final_answer before the reasoner answered")
            trace.steps.append(
                Step(turn=turn, agent=VERIFIER, segments=[info_segment] + verifier_segments)
            )

            response = next(s for s in verifier_segments if s.kind is SegmentKind.RESPONSE)
            feedback = Segment(
                SegmentKind.FEEDBACK,
                response.text,
                environment_tokens(response.text),
                ENVIRONMENT,
            )
            step.segments.append(feedback)
            awaiting_verify = step

        trace.termination = TERM_MAX_TURNS
        return trace
    except _Violation as violation:
        logger.warning("protocol violation by %s: %s", violation.agent, violation)
        trace.termination = TERM_PROTOCOL_ERROR
        trace.offender = violation.agent
        return trace
    except (GatewayError, RetrievalError) as exc:
        logger.warning("backend failure: %s", exc)
        trace.termination = TERM_BACKEND_FAILURE
        return trace


def _verifier_final_turn(
    trace: Trace,
    turn: int,
    config: RewardConfig,
    backends: Backends,
    seed: int | None,
    strict: bool,
) -> None:
    assert trace.reasoner_answer is not None
    info_text = render_answer_information(trace.reasoner_answer)
    info_segment = Segment(
        SegmentKind.INFORMATION, info_text, environment_tokens(info_text), ENVIRONMENT
    )
    segments = _agent_turn(
        backends.verifier,
        VERIFIER,
        build_context(trace, VERIFIER, pending_information=render_segment(info_segment)),
        backends.settings,
        seed,
        strict,
    )
    verdict = validate_step(segments, VERIFIER, is_final=True)
    if not verdict.ok:
        raise _Violation(VERIFIER, verdict.reason or "malformed final step")
    trace.steps.append(Step(turn=turn, agent=VERIFIER, segments=[info_segment] + segments))
    trace.verifier_answer = extract_answer(segments, VERIFIER)


def run_group(
    question: str,
    golds: list[str],
    group_size: int,
    config: RewardConfig,
    backends: BackendsSource,
    query_id: str = "query",
    base_seed: int = 0,
    strict: bool = False,
) -> GroupRollout:
    """Sample a group of dialogues and normalize their rewards.

    ``backends`` may be a single Backends bundle (reused across rollouts)
    or a callable producing a fresh bundle per rollout index.
    """
    if group_size < 2:
        raise GroupTooSmall("group too small")
    traces = []
    breakdowns = []
    for index in range(group_size):
        bundle = backends(index) if callable(backends) else backends
        trace = run_dialogue(
            question,
            golds,
            config,
            bundle,
            query_id=query_id,
            seed=base_seed + index,
            strict=strict,
        )
        traces.append(trace)
        breakdowns.append(score_trace(trace, config))
    rewards_r = [b.r_r for b in breakdowns]
    rewards_v = [b.r_v for b in breakdowns]
    return GroupRollout(
        query_id=query_id,
        traces=traces,
        breakdowns=breakdowns,
        rewards_r=rewards_r,
        rewards_v=rewards_v,
        base_adv_r=group_normalize(rewards_r),
        base_adv_v=group_normalize(rewards_v),
    )
