"""Parity harness: every bound function against the engine's own surface."""

from __future__ import annotations

import math
import random
from typing import Callable

from arr import entropy as _entropy
from arr import grpo as _grpo
from arr import metrics as _metrics
from arr import reward as _reward
from arr.llm_gateway import synth_tokens
from arr.protocol import Segment, SegmentKind, TokenSample, VERIFIER
from arr.retrieval import Document
from arr.dialogue import Step

from . import surface

TOLERANCE = 1e-12

_WORDS = ["paris", "berlin", "the", "capital", "river", "obama", "bridge", "gold", "a", "city"]


class ParityFailure(Exception):
    def __init__(self, function: str, case: int, deviation: float):
        super().__init__(f"{function} case {case}: deviation {deviation}")
        self.function = function
        self.case = case
        self.deviation = deviation


def _phrase(rng: random.Random, low: int = 0, high: int = 4) -> str:
    return " ".join(rng.choices(_WORDS, k=rng.randint(low, high)))


def _golds(rng: random.Random) -> list[str]:
    return [_phrase(rng, 1, 3) for _ in range(rng.randint(1, 3))]


def _logprobs(rng: random.Random, k: int | None = None) -> list[float]:
    k = k or rng.randint(1, 6)
    raw = [rng.random() + 1e-6 for _ in range(k)]
    scale = rng.uniform(0.05, 1.0) / sum(raw)
    return sorted((math.log(r * scale) for r in raw), reverse=True)


def _random_verifier_step(rng: random.Random) -> tuple[dict, Step]:
    """Build the same step as a plain record and as engine objects."""
    segments_plain = []
    segments = []
    for kind in (SegmentKind.VERIFY, SegmentKind.RESPONSE):
        echo = rng.random() < 0.5
        text = "the answer is paris" if echo else "nothing conclusive here"
        confidence = rng.uniform(0.5, 0.99)
        tokens = synth_tokens(text, confidence)
        segments.append(Segment(kind, text, tokens, VERIFIER))
        segments_plain.append(
            {
                "kind": kind.value,
                "text": text,
                "origin": VERIFIER,
                "tokens": [
                    {
                        "text": tok.text,
                        "logprob": tok.logprob,
                        "top_alternatives": [[t, lp] for t, lp in tok.top_alternatives],
                        "policy_generated": tok.policy_generated,
                    }
                    for tok in tokens
                ],
            }
        )
    record = {"turn": 1, "segments": segments_plain}
    return record, Step(1, VERIFIER, segments)


def _check(
    report: dict[str, float], name: str, case: int, bound_value: float, primary_value: float
) -> None:
    deviation = abs(bound_value - primary_value)
    report[name] = max(report.get(name, 0.0), deviation)
    if deviation > TOLERANCE:
        raise ParityFailure(name, case, deviation)


def parity_suite(cases: int = 100, seed: int = 0) -> dict[str, float]:
    """Run `cases` random inputs per bound function.

    Returns the max absolute deviation per function; raises ParityFailure
    the moment any deviation exceeds 1e-12.
    """
    rng = random.Random(seed)
    report: dict[str, float] = {}

    for case in range(cases):
        prediction, golds = _phrase(rng), _golds(rng)
        _check(report, "f1", case, surface.f1(prediction, golds), _metrics.f1(prediction, golds))
        _check(
            report, "em", case, float(surface.em(prediction, golds)), float(_metrics.em(prediction, golds))
        )

        x, n = rng.uniform(-1, 1), rng.choice([1, 2, 4, 10])
        _check(report, "bin_diff", case, surface.bin_diff(x, n), _reward.bin_diff(x, n))

        a, b = rng.random(), rng.random()
        lam = rng.choice([0.0, 0.5, 1.0])
        cfg = _reward.RewardConfig(lambda_=lam, n_buckets=n)
        _check(
            report,
            "adversarial_outcome",
            case,
            surface.adversarial_outcome(a, b, lam, n),
            _reward.adversarial_outcome(a, b, cfg),
        )

        logprobs = _logprobs(rng)
        sample = TokenSample("t", logprobs[0], [(f"t{i}", lp) for i, lp in enumerate(logprobs)])
        _check(
            report,
            "token_entropy",
            case,
            surface.token_entropy(logprobs),
            _entropy.token_entropy(sample),
        )

        triple = [rng.uniform(0, 2) for _ in range(3)]
        delta = rng.choice([0.0, 0.05, 0.2])
        bound_pattern = surface.classify_pattern(triple, delta)
        primary_pattern = _entropy.classify_pattern(triple, delta).value
        _check(report, "classify_pattern", case, float(bound_pattern == primary_pattern), 1.0)

        sequences = {
            "think": [rng.uniform(0, 2) for _ in range(rng.randint(0, 5))],
            "verify": [rng.uniform(0, 2) for _ in range(rng.randint(0, 5))],
        }
        _check(
            report,
            "impact",
            case,
            surface.impact(sequences, delta),
            _reward.impact_from_entropies(sequences, delta),
        )

        record, step = _random_verifier_step(rng)
        doc_texts = ["paris is the capital of france"] if rng.random() < 0.7 else ["no hits"]
        golds_c = ["Paris"]
        docs = [Document(str(i), "", t, i + 1, "") for i, t in enumerate(doc_texts)]
        _check(
            report,
            "clarity",
            case,
            surface.clarity(record, doc_texts, golds_c),
            _reward.clarity(step, docs, golds_c, _reward.RewardConfig()),
        )

        rewards = [rng.uniform(0, 2) for _ in range(rng.randint(2, 8))]
        bound_norm = surface.group_normalize(rewards)
        primary_norm = _grpo.group_normalize(rewards)
        for bound_v, primary_v in zip(bound_norm, primary_norm):
            _check(report, "group_normalize", case, bound_v, primary_v)

        n_tok = rng.randint(1, 12)
        new = [rng.uniform(-3, 0) for _ in range(n_tok)]
        old = [rng.uniform(-3, 0) for _ in range(n_tok)]
        ref = [rng.uniform(-3, 0) for _ in range(n_tok)]
        adv = [rng.uniform(-2, 2) for _ in range(n_tok)]
        mask = [rng.random() < 0.8 for _ in range(n_tok)]
        if not any(mask):
            mask[0] = True
        epsilon, beta = rng.choice([0.1, 0.2]), rng.choice([0.0, 0.01, 1.0])
        _check(
            report,
            "grpo_objective",
            case,
            surface.grpo_objective(new, old, ref, adv, mask, epsilon, beta),
            _grpo.grpo_objective(
                _grpo.GrpoInputs(new, old, ref, adv, mask, epsilon, beta)
            ),
        )

    return report
