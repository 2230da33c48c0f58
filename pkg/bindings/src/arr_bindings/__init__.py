"""Numeric surface of the arr engine, bound to plain scalars and lists."""

from .parity import ParityFailure, parity_suite
from .surface import (
    adversarial_outcome,
    bin_diff,
    clarity,
    classify_pattern,
    em,
    export_batch,
    f1,
    group_normalize,
    grpo_objective,
    impact,
    token_entropy,
)

__version__ = "0.1.0"
