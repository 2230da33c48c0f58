"""Answer normalization, Exact Match, token-level F1, and containment checks."""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass

from .errors import ArrError

_ARTICLES = {"a", "an", "the"}
_PUNCT = set(string.punctuation)


class NoGolds(ArrError):
    """No gold answers were supplied."""


@dataclass
class NormalizedAnswer:
    tokens: list[str]


def normalize_answer(text: str) -> NormalizedAnswer:
    """Lowercase, strip punctuation, drop articles, collapse whitespace."""
    lowered = text.lower()
    no_punct = "".join(ch for ch in lowered if ch not in _PUNCT)
    tokens = [tok for tok in no_punct.split() if tok not in _ARTICLES]
    return NormalizedAnswer(tokens)


def _require_golds(golds: list[str]) -> None:
    if not golds:
        raise NoGolds("at least one gold answer is required")


def f1(prediction: str, golds: list[str]) -> float:
    """Best token-bag F1 of the prediction against any gold answer."""
    _require_golds(golds)
    pred = normalize_answer(prediction).tokens
    best = 0.0
    for gold in golds:
        gold_tokens = normalize_answer(gold).tokens
        best = max(best, _f1_single(pred, gold_tokens))
    return best


def _f1_single(pred: list[str], gold: list[str]) -> float:
    if not pred and not gold:
        return 1.0
    if not pred or not gold:
        return 0.0
    overlap = sum((Counter(pred) & Counter(gold)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(gold)
    return 2 * precision * recall / (precision + recall)


def em(prediction: str, golds: list[str]) -> int:
    """1 iff the normalized prediction equals any normalized gold."""
    _require_golds(golds)
    pred = normalize_answer(prediction).tokens
    return int(any(pred == normalize_answer(gold).tokens for gold in golds))


def contains_gold(text: str, golds: list[str]) -> bool:
    """True iff any normalized gold occurs contiguously in the normalized text."""
    _require_golds(golds)
    haystack = normalize_answer(text).tokens
    for gold in golds:
        needle = normalize_answer(gold).tokens
        if needle and _contains(haystack, needle):
            return True
    return False


def _contains(haystack: list[str], needle: list[str]) -> bool:
    n = len(needle)
    return any(haystack[i : i + n] == needle for i in range(len(haystack) - n + 1))
