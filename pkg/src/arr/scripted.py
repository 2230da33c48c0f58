"""Deterministic scripted dialogues for tests, demos, and offline rollouts.

``ideal_backends_factory`` produces dialogues whose reasoner uncertainty
strictly shrinks turn over turn (every trace classifies as monotonically
decreasing). ``demo_backends_factory`` produces seeded variety: mixed
correctness, turn counts, and entropy trajectories, which is what group
normalization and pattern analysis need to be non-degenerate.
"""

from __future__ import annotations

import random
import zlib
from typing import Callable

from .dialogue import Backends, GenSettings
from .llm_gateway import GenerationResult, ScriptedBackend, synth_tokens
from .protocol import SegmentKind
from .retrieval import InMemoryIndex, Retriever
from .store import QaExample

_K = SegmentKind

# Two-outcome confidences; higher confidence = lower token entropy.
_IDEAL_THINK_CONFIDENCES = [0.55, 0.8, 0.97]


def stable_seed(*parts: object) -> int:
    """Hash-randomization-proof integer seed from arbitrary parts."""
    return zlib.crc32(":".join(str(p) for p in parts).encode("utf-8"))


def scripted_turn(parts: list[tuple[SegmentKind, str, float]]) -> GenerationResult:
    """Build one generation result from (kind, body, confidence) parts.

    Tag markup gets deterministic tokens; the body tokens carry the given
    confidence so each segment's entropy is fully controlled.
    """
    text_pieces = []
    tokens = []
    for kind, body, confidence in parts:
        open_tag, close_tag = f"<{kind.value}>", f"</{kind.value}>"
        tokens.extend(synth_tokens(open_tag, 1.0))
        tokens.extend(synth_tokens(body, confidence))
        tokens.extend(synth_tokens(close_tag, 1.0))
        text_pieces.append(open_tag + body + close_tag)
    return GenerationResult(text="".join(text_pieces), tokens=tokens)


def _reasoner_script(
    question: str,
    answer: str,
    think_confidences: list[float],
    queries: list[str],
) -> list[GenerationResult]:
    """One result per reasoner call, plus the closing answer pass."""
    results = []
    n_turns = len(think_confidences)
    for turn in range(n_turns):
        parts: list[tuple[SegmentKind, str, float]] = []
        if turn > 0:
            parts.append((_K.VERIFY, "The feedback is relevant and usable.", 0.9))
        confidence = think_confidences[turn]
        if turn < n_turns - 1:
            parts.append((_K.THINK, f"I still need evidence about: {question}", confidence))
            parts.append((_K.SEARCH, queries[turn], confidence))
        else:
            parts.append((_K.THINK, "The evidence is sufficient to answer.", confidence))
            parts.append((_K.ANSWER, answer, min(0.98, confidence + 0.01)))
        results.append(scripted_turn(parts))
    results.append(GenerationResult(text=answer, tokens=synth_tokens(answer, 0.98)))
    return results


def _verifier_script(
    gold: str,
    answer: str,
    n_search_turns: int,
    confidence: float,
    echo_gold: bool,
    select_doc: bool,
) -> list[GenerationResult]:
    results = []
    for _ in range(n_search_turns):
        parts: list[tuple[SegmentKind, str, float]] = [
            (_K.VERIFY, "The query targets the question directly.", confidence)
        ]
        if select_doc:
            parts.append((_K.SELECTED_DOC, "Doc 1", confidence))
            if echo_gold:
                response = f"The selected document supports the answer {gold}."
            else:
                response = "The selected document is related but not conclusive."
        else:
            response = "The query is too vague; narrow it down to the entity asked about."
        parts.append((_K.RESPONSE, response, confidence))
        results.append(scripted_turn(parts))
    results.append(
        scripted_turn(
            [
                (_K.VERIFY, "The proposed answer is consistent with the evidence.", confidence),
                (_K.FINAL_ANSWER, answer, min(0.98, confidence + 0.05)),
            ]
        )
    )
    return results


def ideal_backends_factory(
    example: QaExample,
    index: InMemoryIndex | Retriever,
    settings: GenSettings | None = None,
) -> Callable[[int], Backends]:
    """Dialogues with strictly decreasing reasoner entropy, always correct."""
    gold = example.gold_answers[0]
    queries = [example.question, f"{example.question} details"]

    def make(_rollout_index: int) -> Backends:
        return Backends(
            reasoner=ScriptedBackend(
                _reasoner_script(example.question, gold, list(_IDEAL_THINK_CONFIDENCES), queries)
            ),
            verifier=ScriptedBackend(
                _verifier_script(gold, gold, len(queries), 0.9, echo_gold=True, select_doc=True)
            ),
            retriever=index,
            settings=settings or GenSettings(),
        )

    return make


# Think-confidence schedules keyed by the entropy pattern they induce
# (confidence up = entropy down) at the default 0.05 nat threshold.
_DEMO_SCHEDULES = [
    [0.55, 0.8, 0.97],
    [0.6, 0.75, 0.92],
    [0.9, 0.7, 0.55],
    [0.55, 0.9, 0.7],
    [0.8, 0.6, 0.9],
    [0.7, 0.7, 0.7],
]


def demo_backends_factory(
    example: QaExample,
    index: InMemoryIndex | Retriever,
    base_seed: int = 0,
    settings: GenSettings | None = None,
) -> Callable[[int], Backends]:
    """Seeded variety across rollouts of the same question.

    Deterministic given (base_seed, query id, rollout index): answers are
    sometimes wrong, the verifier sometimes filters or critiques, and the
    entropy trajectory follows a seeded schedule.
    """
    gold = example.gold_answers[0]

    def make(rollout_index: int) -> Backends:
        rng = random.Random(stable_seed(base_seed, example.query_id, rollout_index))
        n_turns = rng.choice([2, 3, 3, 4])
        schedule = rng.choice(_DEMO_SCHEDULES)
        confidences = [schedule[min(i, len(schedule) - 1)] for i in range(n_turns)]
        reasoner_correct = rng.random() < 0.7
        verifier_correct = reasoner_correct or rng.random() < 0.3
        reasoner_answer = gold if reasoner_correct else "it remains unclear"
        verifier_answer = gold if verifier_correct else "inconclusive"
        queries = [example.question] + [
            f"{example.question} detail {i}" for i in range(1, n_turns)
        ]
        return Backends(
            reasoner=ScriptedBackend(
                _reasoner_script(example.question, reasoner_answer, confidences, queries)
            ),
            verifier=ScriptedBackend(
                _verifier_script(
                    gold,
                    verifier_answer,
                    n_turns - 1,
                    rng.choice([0.7, 0.85, 0.95]),
                    echo_gold=rng.random() < 0.8,
                    select_doc=rng.random() < 0.9,
                )
            ),
            retriever=index,
            settings=settings or GenSettings(),
        )

    return make


def build_demo_corpus(
    examples: list[QaExample], total_docs: int = 50
) -> list[tuple[str, str, str]]:
    """A small corpus with one supporting document per question plus filler.

    The supporting document repeats the question's wording (so the lexical
    index ranks it first) and contains the gold answer.
    """
    docs = []
    for i, example in enumerate(examples):
        docs.append(
            (
                f"d{i:03d}",
                f"Reference {i}",
                f"{example.question} According to this source the answer is "
                f"{example.gold_answers[0]}.",
            )
        )
    for j in range(len(examples), total_docs):
        docs.append(
            (
                f"f{j:03d}",
                f"Filler {j}",
                f"General reference entry number {j} covering what is the topic of "
                "interest and who is involved in it, for context.",
            )
        )
    return docs
