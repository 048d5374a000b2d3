"""Constituent-level label trees over binary parses: yield-consistency
training objectives computed by dynamic programming, a tape autodiff engine,
a toy recursive encoder with an optional top-down pass, attention-based
multi-instance baselines, and span-attribution evaluation on synthetic
trigger datasets."""

from .trees import (
    ParseTree,
    SexprError,
    Span,
    TreeError,
    build_balanced_tree,
    build_random_tree,
    build_right_branching_tree,
    parse_sexpr,
    serialize_sexpr,
)
from .labels import LabelTree, LabelVocabulary, yield_frontier, yield_labels
from .dp import (
    CapacityError,
    GoldPartition,
    NodeDistributionTable,
    brute_force_exact,
    brute_force_naive,
    dp_contains,
    dp_contains_exclusive,
    dp_full_permutation,
    dp_other,
    factorization_gap,
    loss_factorized,
    loss_full_permutation,
)
from .autodiff import Tape, TapeValue, finite_difference_check
from .model import (
    CheckpointError,
    EncodedTree,
    ModelParams,
    VocabError,
    encode_bottom_up,
    encode_top_down,
    init_model,
    load_checkpoint,
    neutral_regularizer,
    node_label_distributions,
    save_checkpoint,
)
from .training import TrainConfig, TrainResult, train
from .mil import mil_forward, mimll_forward, mimll_select_spans
from .evaluation import (
    AttributionReport,
    SentenceMetrics,
    ShortcutReport,
    SpanLabel,
    bucket_by_span_length,
    evaluate,
    predict_label_tree,
    rank_tokens,
    sentence_metrics,
    shortcut_metrics,
    span_attribution,
    span_attribution_corpus,
)
from .datagen import (
    Example,
    SynthConfig,
    default_shortcuts,
    generate_trigger_dataset,
    poison_with_shortcuts,
    read_jsonl,
    read_vocab,
    write_jsonl,
    write_vocab,
)

__version__ = "0.1.0"
