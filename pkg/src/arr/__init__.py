"""Adversarial reasoner-verifier dialogue rollouts over pluggable generation
and retrieval backends, with entropy-pattern analysis, process-aware rewards,
and GRPO-ready advantage export."""

from .dialogue import (
    Backends,
    GenSettings,
    GroupRollout,
    Step,
    Trace,
    build_context,
    run_dialogue,
    run_group,
)
from .entropy import (
    EntropyPattern,
    PatternStats,
    action_entropy,
    aggregate_patterns,
    classify_pattern,
    classify_trend,
    token_entropy,
)
from .grpo import (
    GrpoInputs,
    TokenAdvantageSheet,
    assemble_token_advantages,
    export_training_batch,
    group_normalize,
    grpo_objective,
)
from .llm_gateway import (
    GenerationRequest,
    GenerationResult,
    HttpBackendConfig,
    HttpChatBackend,
    ScriptedBackend,
)
from .metrics import contains_gold, em, f1, normalize_answer
from .protocol import (
    Segment,
    SegmentKind,
    TokenSample,
    extract_answer,
    parse_transcript,
    render_segment,
    validate_step,
)
from .retrieval import Document, HttpRetriever, InMemoryIndex, RetrievalEvent, index_corpus
from .reward import (
    RewardBreakdown,
    RewardConfig,
    adversarial_outcome,
    bin_diff,
    clarity,
    impact,
    process_advantage,
    score_trace,
)
from .store import QaExample, append_trace, load_dataset, read_traces

__version__ = "0.1.0"
