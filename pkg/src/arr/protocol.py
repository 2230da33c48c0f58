"""Parsing, validation, and rendering of the XML-like action-tag dialogue protocol.

Both agents communicate through a flat sequence of tagged spans such as
``<think>...</think><search>...</search>``. Tags never nest, each role may
only emit tags from its own action space, and text outside tags is noise
(discarded with a warning, or rejected in strict mode).
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum

from .errors import ArrError

logger = logging.getLogger(__name__)


class SegmentKind(str, Enum):
    THINK = "think"
    SEARCH = "search"
    VERIFY = "verify"
    ANSWER = "answer"
    FEEDBACK = "feedback"
    INFORMATION = "information"
    SELECTED_DOC = "selected_doc"
    RESPONSE = "response"
    FINAL_ANSWER = "final_answer"


REASONER = "reasoner"
VERIFIER = "verifier"
ENVIRONMENT = "environment"

REASONER_KINDS = frozenset(
    {SegmentKind.THINK, SegmentKind.SEARCH, SegmentKind.VERIFY, SegmentKind.ANSWER}
)
VERIFIER_KINDS = frozenset(
    {
        SegmentKind.VERIFY,
        SegmentKind.SELECTED_DOC,
        SegmentKind.RESPONSE,
        SegmentKind.FINAL_ANSWER,
    }
)
ENVIRONMENT_KINDS = frozenset({SegmentKind.FEEDBACK, SegmentKind.INFORMATION})

# "environment" is accepted by the parser so injected blocks round-trip in tests.
ROLE_KINDS = {
    REASONER: REASONER_KINDS,
    VERIFIER: VERIFIER_KINDS,
    ENVIRONMENT: ENVIRONMENT_KINDS,
}

TERMINAL_KIND = {REASONER: SegmentKind.ANSWER, VERIFIER: SegmentKind.FINAL_ANSWER}


class ProtocolError(ArrError):
    """A tag-protocol violation; terminates the trace for the offending agent."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


class UnclosedTag(ProtocolError):
    """A tag with no matching partner (dangling open or close)."""


class UnknownTag(ProtocolError):
    def __init__(self, name: str, position: int | None = None):
        super().__init__(f"unknown tag <{name}>", position)
        self.name = name


class ForbiddenKindForRole(ProtocolError):
    def __init__(self, kind: SegmentKind, role: str, position: int | None = None):
        super().__init__(f"tag <{kind.value}> is not allowed for role {role!r}", position)
        self.kind = kind
        self.role = role


class NestedTag(ProtocolError):
    """An opening tag inside an already-open tag."""


class StrayText(ProtocolError):
    """Text outside any tag pair, rejected in strict mode."""


class MultipleAnswers(ProtocolError):
    """More than one terminal segment in a single turn."""


@dataclass
class TokenSample:
    """One generated token with its log-probability and top-k alternatives.

    ``top_alternatives`` is ordered by log-probability, non-increasing.
    All log-probabilities are natural logs and must be <= 0.
    """

    text: str
    logprob: float
    top_alternatives: list[tuple[str, float]] = field(default_factory=list)
    policy_generated: bool = True

    def __post_init__(self):
        if self.logprob > 0.0:
            raise ValueError(f"token logprob must be <= 0, got {self.logprob}")
        prev = None
        for _, lp in self.top_alternatives:
            if lp > 0.0:
                raise ValueError(f"alternative logprob must be <= 0, got {lp}")
            if prev is not None and lp > prev:
                raise ValueError("top_alternatives must be sorted non-increasing")
            prev = lp


@dataclass
class Segment:
    """A typed action span: one tagged move by an agent or the environment."""

    kind: SegmentKind
    text: str
    tokens: list[TokenSample] = field(default_factory=list)
    origin: str = ENVIRONMENT

    def __post_init__(self):
        if self.origin == ENVIRONMENT:
            for tok in self.tokens:
                if tok.policy_generated:
                    raise ValueError("environment segments cannot carry policy tokens")

    def policy_tokens(self) -> list[TokenSample]:
        return [t for t in self.tokens if t.policy_generated]


@dataclass
class _TaggedSpan:
    kind: SegmentKind
    text: str
    inner_start: int
    inner_end: int


_TAG_RE = re.compile(r"</?([A-Za-z_][A-Za-z0-9_]*)>")
_TAG_NAMES = {k.value for k in SegmentKind}


def _scan_spans(raw: str, role: str, strict: bool) -> list[_TaggedSpan]:
    try:
        allowed = ROLE_KINDS[role]
    except KeyError:
        raise ValueError(f"unknown role {role!r}") from None

    spans: list[_TaggedSpan] = []
    open_kind: SegmentKind | None = None
    open_pos = 0
    inner_start = 0
    last_end = 0

    def check_stray(text: str, position: int) -> None:
        if text.strip():
            if strict:
                raise StrayText(f"text outside tags: {text.strip()[:40]!r}", position)
            logger.warning("discarding text outside tags at %d: %r", position, text.strip()[:40])

    for match in _TAG_RE.finditer(raw):
        name = match.group(1)
        is_close = raw[match.start() + 1] == "/"
        if open_kind is None:
            check_stray(raw[last_end : match.start()], last_end)
            if name not in _TAG_NAMES:
                raise UnknownTag(name, match.start())
            kind = SegmentKind(name)
            if is_close:
                raise UnclosedTag(f"closing tag </{name}> without an open tag", match.start())
            if kind not in allowed:
                raise ForbiddenKindForRole(kind, role, match.start())
            open_kind = kind
            open_pos = match.start()
            inner_start = match.end()
        else:
            if name not in _TAG_NAMES:
                raise UnknownTag(name, match.start())
            if not is_close:
                raise NestedTag(f"tag <{name}> nested inside <{open_kind.value}>", match.start())
            if SegmentKind(name) is not open_kind:
                raise UnclosedTag(
                    f"closing tag </{name}> does not match open <{open_kind.value}>",
                    match.start(),
                )
            inner = raw[inner_start : match.start()]
            spans.append(_TaggedSpan(open_kind, inner.strip(), inner_start, match.start()))
            open_kind = None
        last_end = match.end()

    if open_kind is not None:
        raise UnclosedTag(f"tag <{open_kind.value}> is never closed", open_pos)
    check_stray(raw[last_end:], last_end)
    return spans


def parse_transcript(raw: str, role: str, strict: bool = False) -> list[Segment]:
    """Parse one agent turn into ordered segments.

    Only tags from the role's action space are accepted. Inner text is
    trimmed. Raises a ProtocolError subclass on any malformed markup.
    """
    return [
        Segment(kind=s.kind, text=s.text, origin=role) for s in _scan_spans(raw, role, strict)
    ]


class StepShape(Enum):
    COMPLETE_INTERMEDIATE = "complete_intermediate"
    COMPLETE_FINAL = "complete_final"
    MALFORMED = "malformed"


@dataclass
class StepVerdict:
    shape: StepShape
    reason: str | None = None

    @property
    def ok(self) -> bool:
        return self.shape is not StepShape.MALFORMED


_K = SegmentKind
_REASONER_SHAPES = {
    (_K.THINK, _K.SEARCH): StepShape.COMPLETE_INTERMEDIATE,
    (_K.THINK, _K.SEARCH, _K.VERIFY): StepShape.COMPLETE_INTERMEDIATE,
    (_K.VERIFY, _K.THINK, _K.SEARCH): StepShape.COMPLETE_INTERMEDIATE,
    (_K.THINK, _K.ANSWER): StepShape.COMPLETE_FINAL,
    (_K.VERIFY, _K.THINK, _K.ANSWER): StepShape.COMPLETE_FINAL,
}
_VERIFIER_SHAPES = {
    (_K.VERIFY, _K.SELECTED_DOC, _K.RESPONSE): StepShape.COMPLETE_INTERMEDIATE,
    # Ineffective-query path: the critique is returned without a curated doc.
    (_K.VERIFY, _K.RESPONSE): StepShape.COMPLETE_INTERMEDIATE,
    (_K.VERIFY, _K.FINAL_ANSWER): StepShape.COMPLETE_FINAL,
}


def validate_step(segments: list[Segment], role: str, is_final: bool = False) -> StepVerdict:
    """Judge whether one turn's policy segments form a complete step.

    Reasoner steps are (think, search) with an optional verify before or
    after (the verify lands once feedback has been injected), or the final
    (think, answer). Verifier steps are (verify, selected_doc, response),
    (verify, response), or the final (verify, final_answer).
    """
    kinds = tuple(s.kind for s in segments if s.origin != ENVIRONMENT)
    shapes = _REASONER_SHAPES if role == REASONER else _VERIFIER_SHAPES
    shape = shapes.get(kinds)
    if shape is None:
        return StepVerdict(StepShape.MALFORMED, _malformed_reason(kinds, role))
    if is_final and shape is StepShape.COMPLETE_INTERMEDIATE:
        return StepVerdict(StepShape.MALFORMED, "expected a final step")
    return StepVerdict(shape)


def _malformed_reason(kinds: tuple[SegmentKind, ...], role: str) -> str:
    if not kinds:
        return "empty step"
    if role == REASONER:
        if _K.THINK not in kinds:
            return "missing think"
        if _K.SEARCH not in kinds and _K.ANSWER not in kinds:
            return "missing search or answer"
    else:
        if _K.VERIFY not in kinds:
            return "missing verify"
        if _K.RESPONSE not in kinds and _K.FINAL_ANSWER not in kinds:
            return "missing response or final_answer"
    return "unexpected segment sequence: " + ", ".join(k.value for k in kinds)


def render_segment(segment: Segment) -> str:
    """Render a segment back to its tagged form."""
    tag = segment.kind.value
    return f"<{tag}>{segment.text}</{tag}>"


def extract_answer(segments: list[Segment], role: str) -> str | None:
    """Return the trimmed text of the role's terminal segment, if any."""
    terminal = TERMINAL_KIND[role]
    found = [s for s in segments if s.kind is terminal]
    if len(found) > 1:
        raise MultipleAnswers(f"{len(found)} {terminal.value} segments in one turn")
    if not found:
        return None
    return found[0].text.strip()
