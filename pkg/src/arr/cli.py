"""Operator entry points: rollout, score, analyze, and eval."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from math import fsum

from .dialogue import Backends, GenSettings, GroupRollout, run_group
from .entropy import aggregate_patterns
from .errors import ArrError, IoFailure
from .grpo import assemble_token_advantages, build_batch_records, group_normalize
from .llm_gateway import HttpBackendConfig, HttpChatBackend
from .metrics import em, f1
from .retrieval import HttpRetriever, HttpRetrieverConfig, index_corpus, load_corpus
from .reward import RewardConfig, score_trace
from .scripted import build_demo_corpus, demo_backends_factory
from .store import QaExample, append_trace, load_dataset, read_traces

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arr",
        description="Reasoner-verifier dialogue rollouts, scoring, and entropy analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    rollout = sub.add_parser("rollout", help="run grouped dialogues over a dataset")
    rollout.add_argument("--dataset", required=True, help="JSONL with id/question/golden_answers")
    rollout.add_argument("--out", required=True, help="output trace JSONL")
    rollout.add_argument("--config", help="flat JSON config file")
    rollout.add_argument("--backend", choices=["http", "scripted"], default="scripted")
    rollout.add_argument("--seed", type=int, default=0)
    rollout.add_argument("--parallel", type=int, default=1)
    rollout.add_argument("--limit", type=int, default=None)
    rollout.add_argument("--strict", action="store_true", help="reject stray text outside tags")

    score = sub.add_parser("score", help="recompute rewards and advantages from stored traces")
    score.add_argument("--traces", required=True)
    score.add_argument("--out", required=True, help="output arr-batch/1 JSONL")
    score.add_argument("--config", help="flat JSON config file")
    score.add_argument("--strict", action="store_true")

    analyze = sub.add_parser("analyze", help="entropy-pattern proportions and accuracy")
    analyze.add_argument("--traces", required=True)
    analyze.add_argument("--out", required=True, help="output CSV")
    analyze.add_argument("--config", help="flat JSON config file")
    analyze.add_argument("--delta", type=float, default=None, help="trend threshold in nats")
    analyze.add_argument("--strict", action="store_true")

    evaluate = sub.add_parser("eval", help="EM/F1 over final answers")
    evaluate.add_argument("--traces", required=True)
    evaluate.add_argument("--out", default=None, help="optional JSON output")
    evaluate.add_argument("--strict", action="store_true")
    return parser


def _load_flat_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc


def _gen_settings(mapping: dict) -> GenSettings:
    settings = GenSettings()
    if "max_tokens" in mapping:
        settings.max_tokens = int(mapping["max_tokens"])
    if "temperature" in mapping:
        settings.temperature = float(mapping["temperature"])
    if "top_logprobs_k" in mapping:
        settings.top_logprobs_k = int(mapping["top_logprobs_k"])
    if "stop_sequences" in mapping:
        settings.stop_sequences = tuple(mapping["stop_sequences"])
    return settings


def _http_backends(mapping: dict) -> Backends:
    backend_cfg = HttpBackendConfig(
        endpoint_url=mapping["endpoint_url"],
        model=mapping["model"],
        timeout=float(mapping.get("timeout", 60.0)),
        retry_count=int(mapping.get("retry_count", 2)),
        api_key_env=mapping.get("api_key_env", "ARR_API_KEY"),
    )
    retriever = HttpRetriever(
        HttpRetrieverConfig(
            url=mapping["retrieval_url"],
            timeout=float(mapping.get("timeout", 30.0)),
            retry_count=int(mapping.get("retry_count", 2)),
        )
    )
    backend = HttpChatBackend(backend_cfg)
    return Backends(backend, backend, retriever, _gen_settings(mapping))


def cmd_rollout(args: argparse.Namespace) -> int:
    mapping = _load_flat_config(args.config)
    cfg = RewardConfig.from_mapping(mapping)
    examples = load_dataset(args.dataset)
    if args.limit is not None:
        examples = examples[: args.limit]

    if args.backend == "scripted":
        corpus_path = mapping.get("corpus_path")
        corpus = load_corpus(corpus_path) if corpus_path else build_demo_corpus(examples)
        index = index_corpus(corpus)
        settings = _gen_settings(mapping)

        def backends_for(example: QaExample):
            return demo_backends_factory(example, index, args.seed, settings)

    else:
        shared = _http_backends(mapping)

        def backends_for(example: QaExample):
            return shared

    def roll(job: tuple[int, QaExample]) -> GroupRollout:
        position, example = job
        return run_group(
            example.question,
            example.gold_answers,
            cfg.group_size,
            cfg,
            backends_for(example),
            query_id=example.query_id,
            base_seed=args.seed + position * 1000,
            strict=args.strict,
        )

    jobs = list(enumerate(examples))
    if args.parallel > 1:
        with ThreadPoolExecutor(max_workers=args.parallel) as pool:
            groups = list(pool.map(roll, jobs))
    else:
        groups = [roll(job) for job in jobs]

    written = 0
    for group in groups:
        for trace, breakdown in zip(group.traces, group.breakdowns):
            append_trace(trace, breakdown, args.out)
            written += 1
    print(f"wrote {written} traces for {len(examples)} questions to {args.out}")
    return 0


def score_traces_file(traces_path: str, out_path: str, cfg: RewardConfig, strict: bool = False) -> int:
    """Recompute rewards, group advantages, and token sheets; write arr-batch/1.

    Traces are grouped by query id (first-appearance order preserved), so the
    output bytes depend only on the input file and the config.
    """
    groups: dict[str, list] = {}
    order: list[str] = []
    for trace, _ in read_traces(traces_path, strict=strict):
        if trace.query_id not in groups:
            groups[trace.query_id] = []
            order.append(trace.query_id)
        groups[trace.query_id].append(trace)

    records = []
    for query_id in order:
        traces = groups[query_id]
        breakdowns = [score_trace(trace, cfg) for trace in traces]
        rewards_r = [b.r_r for b in breakdowns]
        rewards_v = [b.r_v for b in breakdowns]
        base_r = group_normalize(rewards_r)
        base_v = group_normalize(rewards_v)
        group = GroupRollout(query_id, traces, breakdowns, rewards_r, rewards_v, base_r, base_v)
        sheets = [
            assemble_token_advantages(trace, breakdown, adv_r, adv_v, cfg)
            for trace, breakdown, adv_r, adv_v in zip(traces, breakdowns, base_r, base_v)
        ]
        records.extend(build_batch_records(group, sheets))

    try:
        with open(out_path, "w", encoding="utf-8") as handle:
            for record in records:
                handle.write(json.dumps(record) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write batch {out_path}: {exc}") from exc
    return len(records)


def cmd_score(args: argparse.Namespace) -> int:
    cfg = RewardConfig.from_mapping(_load_flat_config(args.config))
    count = score_traces_file(args.traces, args.out, cfg, strict=args.strict)
    print(f"wrote {count} batch records to {args.out}")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    mapping = _load_flat_config(args.config)
    cfg = RewardConfig.from_mapping(mapping)
    delta = args.delta if args.delta is not None else cfg.delta
    samples = []
    for trace, _ in read_traces(args.traces, strict=args.strict):
        correct = bool(
            trace.final_answer is not None
            and trace.gold_answers
            and em(trace.final_answer, trace.gold_answers)
        )
        samples.append((trace, correct))
    stats = aggregate_patterns(
        samples,
        delta=delta,
        monitored_kinds=cfg.monitored_reasoner_kinds,
        csv_path=args.out,
    )
    for stat in stats:
        shares = ", ".join(
            f"{p.value}={share:.3f}" for p, share in stat.proportion_per_pattern.items()
        )
        print(f"bucket {stat.bucket_label}: n={stat.sample_count} {shares}")
    if not stats:
        print("no traces with enough monitored turns")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    em_scores = []
    f1_scores = []
    for trace, _ in read_traces(args.traces, strict=args.strict):
        answer = trace.final_answer or ""
        em_scores.append(float(em(answer, trace.gold_answers)))
        f1_scores.append(f1(answer, trace.gold_answers))
    if not em_scores:
        print("no traces found")
        return 1
    summary = {
        "n": len(em_scores),
        "em": fsum(em_scores) / len(em_scores),
        "f1": fsum(f1_scores) / len(f1_scores),
    }
    print(f"{'metric':<8}value")
    print(f"{'n':<8}{summary['n']}")
    print(f"{'em':<8}{summary['em']:.4f}")
    print(f"{'f1':<8}{summary['f1']:.4f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            json.dump(summary, handle)
            handle.write("\n")
    return 0


_COMMANDS = {
    "rollout": cmd_rollout,
    "score": cmd_score,
    "analyze": cmd_analyze,
    "eval": cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ArrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        logger.exception("unexpected failure")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
