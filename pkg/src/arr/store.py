"""Dataset ingestion and append-only trajectory persistence (JSONL)."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Iterator, Mapping

from .dialogue import Step, Trace
from .errors import ArrError, IoFailure
from .protocol import Segment, SegmentKind, TokenSample
from .retrieval import Document, RetrievalEvent
from .reward import RewardBreakdown, breakdown_from_dict, breakdown_to_dict

logger = logging.getLogger(__name__)

TRACE_SCHEMA = "arr-trace/1"


class StoreError(ArrError):
    """Base class for persistence failures."""


class SchemaViolation(StoreError):
    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message)
        self.line_number = line_number


class DuplicateId(StoreError):
    """The same query id appears twice in a dataset file."""


@dataclass
class QaExample:
    query_id: str
    question: str
    gold_answers: list[str]


def load_dataset(path: str) -> list[QaExample]:
    """Read a JSONL dataset with fields id, question, golden_answers."""
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot open dataset {path}: {exc}") from exc
    examples = []
    seen: set[str] = set()
    with handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except ValueError as exc:
                raise SchemaViolation(f"line {line_no}: invalid JSON: {exc}", line_no) from exc
            try:
                query_id = str(record["id"])
                question = str(record["question"])
                golds = record["golden_answers"]
            except (KeyError, TypeError) as exc:
                raise SchemaViolation(f"line {line_no}: missing field {exc}", line_no) from exc
            if not isinstance(golds, list) or not golds:
                raise SchemaViolation(
                    f"line {line_no}: golden_answers must be a non-empty array", line_no
                )
            if query_id in seen:
                raise DuplicateId(f"duplicate id {query_id!r} at line {line_no}")
            seen.add(query_id)
            examples.append(QaExample(query_id, question, [str(g) for g in golds]))
    return examples


def _token_to_record(token: TokenSample) -> dict:
    return {
        "text": token.text,
        "logprob": token.logprob,
        "top_alternatives": [[text, lp] for text, lp in token.top_alternatives],
        "policy_generated": token.policy_generated,
    }


def _token_from_record(record: Mapping) -> TokenSample:
    return TokenSample(
        text=record["text"],
        logprob=float(record["logprob"]),
        top_alternatives=[(str(t), float(lp)) for t, lp in record["top_alternatives"]],
        policy_generated=bool(record["policy_generated"]),
    )


def _segment_to_record(segment: Segment) -> dict:
    return {
        "kind": segment.kind.value,
        "text": segment.text,
        "origin": segment.origin,
        "tokens": [_token_to_record(tok) for tok in segment.tokens],
    }


def _segment_from_record(record: Mapping) -> Segment:
    return Segment(
        kind=SegmentKind(record["kind"]),
        text=record["text"],
        tokens=[_token_from_record(tok) for tok in record["tokens"]],
        origin=record["origin"],
    )


def _document_to_record(doc: Document) -> dict:
    return {
        "doc_id": doc.doc_id,
        "title": doc.title,
        "text": doc.text,
        "rank": doc.rank,
        "source_query": doc.source_query,
    }


def _document_from_record(record: Mapping) -> Document:
    return Document(
        doc_id=record["doc_id"],
        title=record["title"],
        text=record["text"],
        rank=int(record["rank"]),
        source_query=record["source_query"],
    )


def trace_to_record(trace: Trace, breakdown: RewardBreakdown) -> dict:
    return {
        "schema": TRACE_SCHEMA,
        "query_id": trace.query_id,
        "question": trace.question,
        "gold_answers": list(trace.gold_answers),
        "steps": [
            {
                "turn": step.turn,
                "agent": step.agent,
                "segments": [_segment_to_record(seg) for seg in step.segments],
            }
            for step in trace.steps
        ],
        "retrievals": [
            {
                "turn": event.turn,
                "query": event.query,
                "documents": [_document_to_record(doc) for doc in event.documents],
            }
            for event in trace.retrievals
        ],
        "reasoner_answer": trace.reasoner_answer,
        "verifier_answer": trace.verifier_answer,
        "final_answer": trace.final_answer,
        "termination": trace.termination,
        "offender": trace.offender,
        "reward": breakdown_to_dict(breakdown),
    }


def trace_from_record(record: Mapping) -> tuple[Trace, RewardBreakdown]:
    if record.get("schema") != TRACE_SCHEMA:
        raise SchemaViolation(f"unexpected schema {record.get('schema')!r}")
    try:
        trace = Trace(
            query_id=record["query_id"],
            question=record["question"],
            gold_answers=[str(g) for g in record["gold_answers"]],
            steps=[
                Step(
                    turn=int(step["turn"]),
                    agent=step["agent"],
                    segments=[_segment_from_record(seg) for seg in step["segments"]],
                )
                for step in record["steps"]
            ],
            retrievals=[
                RetrievalEvent(
                    turn=int(event["turn"]),
                    query=event["query"],
                    documents=[_document_from_record(doc) for doc in event["documents"]],
                )
                for event in record["retrievals"]
            ],
            reasoner_answer=record["reasoner_answer"],
            verifier_answer=record["verifier_answer"],
            final_answer=record["final_answer"],
            termination=record["termination"],
            offender=record.get("offender"),
        )
        breakdown = breakdown_from_dict(record["reward"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaViolation(f"bad trace record: {exc}") from exc
    return trace, breakdown


def append_trace(trace: Trace, breakdown: RewardBreakdown, path: str) -> None:
    """Append one trace record and flush."""
    record = trace_to_record(trace, breakdown)
    try:
        with open(path, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(record) + "\n")
            handle.flush()
    except OSError as exc:
        raise IoFailure(f"cannot append to {path}: {exc}") from exc


def read_traces(path: str, strict: bool = False) -> Iterator[tuple[Trace, RewardBreakdown]]:
    """Lazily yield (trace, breakdown) pairs from an arr-trace/1 file.

    In lenient mode malformed lines are logged with their line number and
    skipped; in strict mode they raise SchemaViolation.
    """
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot open traces {path}: {exc}") from exc
    with handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                yield trace_from_record(record)
            except (ValueError, SchemaViolation) as exc:
                if strict:
                    if isinstance(exc, SchemaViolation):
                        exc.line_number = line_no
                        raise
                    raise SchemaViolation(f"line {line_no}: {exc}", line_no) from exc
                logger.warning("skipping malformed trace line %d: %s", line_no, exc)
