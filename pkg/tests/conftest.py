from __future__ import annotations

import json

import pytest

from arr.dialogue import Step, Trace
from arr.llm_gateway import synth_tokens
from arr.protocol import REASONER, VERIFIER, Segment, SegmentKind
from arr.retrieval import Document
from arr.reward import RewardConfig
from arr.store import QaExample

QUESTIONS = [
    ("q00", "what is the capital of france", ["Paris"]),
    ("q01", "who wrote hamlet", ["William Shakespeare", "Shakespeare"]),
    ("q02", "largest planet in the solar system", ["Jupiter"]),
    ("q03", "chemical symbol for gold", ["Au"]),
    ("q04", "year the berlin wall fell", ["1989"]),
    ("q05", "longest river in south america", ["Amazon", "Amazon River"]),
    ("q06", "author of the origin of species", ["Charles Darwin", "Darwin"]),
    ("q07", "smallest prime number", ["2"]),
    ("q08", "currency of japan", ["yen", "Japanese yen"]),
    ("q09", "mountain range containing mount everest", ["Himalayas", "the Himalayas"]),
]


@pytest.fixture
def cfg() -> RewardConfig:
    return RewardConfig()


@pytest.fixture
def fixture_examples() -> list[QaExample]:
    return [QaExample(qid, question, list(golds)) for qid, question, golds in QUESTIONS]


@pytest.fixture
def dataset_path(tmp_path, fixture_examples):
    path = tmp_path / "dataset.jsonl"
    with open(path, "w", encoding="utf-8") as handle:
        for example in fixture_examples:
            handle.write(
                json.dumps(
                    {
                        "id": example.query_id,
                        "question": example.question,
                        "golden_answers": example.gold_answers,
                    }
                )
                + "\n"
            )
    return str(path)


def make_segment(kind: SegmentKind, text: str, confidence: float, origin: str) -> Segment:
    policy = origin != "environment"
    return Segment(kind, text, synth_tokens(text, confidence, policy_generated=policy), origin)


def think_trace(confidences: list[float], golds: list[str] | None = None) -> Trace:
    """A minimal trace whose reasoner think entropies follow the confidences."""
    steps = []
    for turn, confidence in enumerate(confidences, start=1):
        steps.append(
            Step(
                turn,
                REASONER,
                [
                    make_segment(SegmentKind.THINK, f"thought {turn}", confidence, REASONER),
                    make_segment(SegmentKind.SEARCH, f"query {turn}", 0.9, REASONER),
                ],
            )
        )
    return Trace(
        query_id="fixture",
        question="question",
        gold_answers=golds or ["gold"],
        steps=steps,
        termination="max_turns",
    )


def verifier_step(
    turn: int,
    confidence: float,
    response_text: str,
    verify_text: str = "checks out",
    with_selected_doc: bool = True,
) -> Step:
    segments = [make_segment(SegmentKind.VERIFY, verify_text, confidence, VERIFIER)]
    if with_selected_doc:
        segments.append(make_segment(SegmentKind.SELECTED_DOC, "Doc 1", confidence, VERIFIER))
    segments.append(make_segment(SegmentKind.RESPONSE, response_text, confidence, VERIFIER))
    return Step(turn, VERIFIER, segments)


def doc(text: str, rank: int = 1, doc_id: str = "d0") -> Document:
    return Document(doc_id, f"title {doc_id}", text, rank, "query")
