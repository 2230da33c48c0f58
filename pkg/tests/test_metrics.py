from __future__ import annotations

import random
import re
from collections import Counter

import pytest

from arr.metrics import NoGolds, contains_gold, em, f1, normalize_answer


class TestNormalize:
    def test_punctuation_case_articles(self):
        assert normalize_answer("The Golden Gate Bridge!").tokens == ["golden", "gate", "bridge"]

    def test_single_token(self):
        assert normalize_answer("Beijing").tokens == ["beijing"]

    def test_articles_only(self):
        assert normalize_answer("a   an the").tokens == []

    def test_apostrophe(self):
        assert normalize_answer("it's").tokens == ["its"]


def oracle_f1(prediction: str, golds: list[str]) -> float:
    """Independent scorer: regex normalization plus explicit bag counts."""

    def norm(text):
        cleaned = re.sub(r"[^\w\s]", "", text.lower())
        return [t for t in cleaned.split() if t not in ("a", "an", "the")]

    best = 0.0
    pred = norm(prediction)
    for gold in golds:
        g = norm(gold)
        if not pred and not g:
            best = max(best, 1.0)
            continue
        if not pred or not g:
            continue
        common = Counter(pred) & Counter(g)
        overlap = sum(common.values())
        if overlap == 0:
            continue
        p, r = overlap / len(pred), overlap / len(g)
        best = max(best, 2 * p * r / (p + r))
    return best


class TestF1:
    def test_identity(self):
        assert f1("Beijing", ["Beijing"]) == 1.0

    def test_partial_overlap(self):
        assert f1("barack obama", ["obama"]) == pytest.approx(2 / 3, abs=1e-12)

    def test_multi_gold_max(self):
        assert f1("paris", ["Beijing", "Paris, France"]) == pytest.approx(2 / 3, abs=1e-12)

    def test_empty_prediction(self):
        assert f1("", ["x"]) == 0.0

    def test_both_empty_after_normalization(self):
        assert f1("a an the", ["the a an"]) == 1.0

    def test_no_golds(self):
        with pytest.raises(NoGolds):
            f1("x", [])

    def test_against_independent_scorer(self):
        rng = random.Random(7)
        vocab = ["paris", "france", "beijing", "the", "a", "bridge", "golden", "obama"]
        for _ in range(300):
            pred = " ".join(rng.choices(vocab, k=rng.randint(0, 4)))
            golds = [
                " ".join(rng.choices(vocab, k=rng.randint(1, 3)))
                for _ in range(rng.randint(1, 3))
            ]
            assert f1(pred, golds) == pytest.approx(oracle_f1(pred, golds), abs=1e-12)


class TestEm:
    def test_normalized_match(self):
        assert em("The Beijing", ["beijing"]) == 1

    def test_superset_is_not_exact(self):
        assert em("Beijing city", ["Beijing"]) == 0

    def test_empty_prediction(self):
        assert em("", ["x"]) == 0

    def test_word_order_matters(self):
        assert em("obama barack", ["barack obama"]) == 0
        assert f1("obama barack", ["barack obama"]) == 1.0

    def test_em_implies_f1(self):
        rng = random.Random(11)
        vocab = ["alpha", "beta", "gamma", "the"]
        for _ in range(200):
            pred = " ".join(rng.choices(vocab, k=rng.randint(1, 3)))
            golds = [" ".join(rng.choices(vocab, k=rng.randint(1, 3)))]
            if em(pred, golds) == 1:
                assert f1(pred, golds) == 1.0


class TestContainsGold:
    def test_simple_containment(self):
        assert contains_gold("the capital is Beijing today", ["Beijing"]) is True

    def test_multiword_with_article_gold(self):
        assert contains_gold("golden gate bridge spans the bay", ["The Golden Gate Bridge"]) is True

    def test_token_boundary_respected(self):
        assert contains_gold("beijingese cuisine is famous", ["Beijing"]) is False

    def test_gold_contains_itself(self):
        for gold in ("Beijing", "The Golden Gate Bridge", "12 April 1961"):
            assert contains_gold(gold, [gold]) is True

    def test_no_golds(self):
        with pytest.raises(NoGolds):
            contains_gold("x", [])


class TestInvariance:
    def test_article_and_case_invariance(self):
        base = f1("golden gate bridge", ["golden gate bridge"])
        assert f1("The GOLDEN gate Bridge", ["a golden GATE bridge"]) == base == 1.0

    def test_f1_bounds(self):
        rng = random.Random(3)
        vocab = ["x", "y", "z", "w"]
        for _ in range(200):
            pred = " ".join(rng.choices(vocab, k=rng.randint(0, 4)))
            golds = [" ".join(rng.choices(vocab, k=rng.randint(1, 4)))]
            assert 0.0 <= f1(pred, golds) <= 1.0
