"""Plain-scalar wrappers over the engine's numeric functions.

Everything here accepts and returns built-in scalars, lists, and dicts so
an external training loop can call in without touching engine types. The
heavy lifting stays in the ``arr`` package.
"""

from __future__ import annotations

from typing import Mapping, Sequence

from arr import cli as _cli
from arr import entropy as _entropy
from arr import grpo as _grpo
from arr import metrics as _metrics
from arr import reward as _reward
from arr.protocol import VERIFIER, Segment, SegmentKind, TokenSample
from arr.retrieval import Document
from arr.dialogue import Step


def f1(prediction: str, golds: Sequence[str]) -> float:
    return _metrics.f1(prediction, list(golds))


def em(prediction: str, golds: Sequence[str]) -> int:
    return _metrics.em(prediction, list(golds))


def bin_diff(x: float, n: int) -> float:
    return _reward.bin_diff(x, n)


def adversarial_outcome(
    f1_self: float, f1_other: float, lambda_: float = 0.5, n_buckets: int = 4
) -> float:
    cfg = _reward.RewardConfig(lambda_=lambda_, n_buckets=n_buckets)
    return _reward.adversarial_outcome(f1_self, f1_other, cfg)


def token_entropy(top_logprobs: Sequence[float]) -> float:
    """Entropy in nats from a token's top-k alternative log-probabilities."""
    return _entropy.entropy_from_logprobs(top_logprobs)


def classify_pattern(entropies: Sequence[float], delta: float = 0.05) -> str:
    return _entropy.classify_pattern(list(entropies), delta).value


def impact(
    entropies_by_kind: Mapping[str, Sequence[float]],
    delta: float = 0.05,
    pattern_scores: Mapping[str, float] | None = None,
) -> float:
    scores = None
    if pattern_scores is not None:
        scores = {
            _entropy.EntropyPattern(name): float(value)
            for name, value in pattern_scores.items()
        }
    sequences = {kind: list(seq) for kind, seq in entropies_by_kind.items()}
    return _reward.impact_from_entropies(sequences, delta, scores)


def _segment_from_plain(record: Mapping) -> Segment:
    tokens = [
        TokenSample(
            text=str(tok.get("text", "")),
            logprob=float(tok.get("logprob", 0.0)),
            top_alternatives=[(str(t), float(lp)) for t, lp in tok.get("top_alternatives", [])],
            policy_generated=bool(tok.get("policy_generated", True)),
        )
        for tok in record.get("tokens", [])
    ]
    return Segment(
        kind=SegmentKind(record["kind"]),
        text=str(record.get("text", "")),
        tokens=tokens,
        origin=str(record.get("origin", VERIFIER)),
    )


def clarity(
    step_record: Mapping,
    doc_texts: Sequence[str],
    golds: Sequence[str],
    credited_kinds: Sequence[str] = ("verify", "response"),
) -> float:
    """Clarity of one verifier step given as a plain record.

    ``step_record`` carries ``segments``: a list of {kind, text, tokens}
    dicts where each token has logprob/top_alternatives/policy_generated.
    """
    step = Step(
        turn=int(step_record.get("turn", 1)),
        agent=VERIFIER,
        segments=[_segment_from_plain(seg) for seg in step_record["segments"]],
    )
    docs = [
        Document(doc_id=str(i), title="", text=text, rank=i + 1, source_query="")
        for i, text in enumerate(doc_texts)
    ]
    cfg = _reward.RewardConfig(
        credited_verifier_kinds=frozenset(SegmentKind(k) for k in credited_kinds)
    )
    return _reward.clarity(step, docs, list(golds), cfg)


def group_normalize(rewards: Sequence[float]) -> list[float]:
    return _grpo.group_normalize(list(rewards))


def grpo_objective(
    new_logprobs: Sequence[float],
    old_logprobs: Sequence[float],
    ref_logprobs: Sequence[float],
    advantages: Sequence[float],
    mask: Sequence[bool],
    epsilon: float = 0.2,
    beta: float = 0.0,
) -> float:
    inputs = _grpo.GrpoInputs(
        new_logprobs=list(new_logprobs),
        old_logprobs=list(old_logprobs),
        ref_logprobs=list(ref_logprobs),
        advantages=list(advantages),
        mask=list(mask),
        epsilon=epsilon,
        beta=beta,
    )
    return _grpo.grpo_objective(inputs)


def export_batch(traces_path: str, out_path: str, config: Mapping | None = None) -> int:
    """Write arr-batch/1 records for a trace file; same bytes as `arr score`."""
    cfg = _reward.RewardConfig.from_mapping(config or {})
    return _cli.score_traces_file(traces_path, out_path, cfg)
