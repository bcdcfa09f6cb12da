"""Rater-repetition-corrected tests for group differences in crowdsourced ratings."""

from .errors import (
    ConfigError,
    DegenerateVariance,
    DuplicateAnnotationId,
    EmptyGroup,
    EmptyInput,
    InsufficientData,
    InsufficientRaters,
    PerceptError,
    PreconditionViolation,
    SchemaError,
)
from .estimators import (
    between_rater_variance,
    paired_repetition_count,
    paired_variance_of_mean,
    unpaired_shared_rater_counts,
    unpaired_variance_of_mean,
)
from .filters import (
    apply_filter_pipeline,
    filter_inconsistent_demographics,
    filter_min_annotations,
    filter_single_gender_utterances,
    filter_zero_variance_sessions,
)
from .hypotheses import (
    p_value,
    paired_test,
    results_to_json,
    results_to_table,
    run_battery,
    significance_tier,
    unpaired_test,
)
from .sampler import build_pair_index, sample_pairs, verify_sample
from .store import (
    AnnotationRecord,
    Dataset,
    majority_vote_speaker_gender,
    parse_annotations,
    summary_statistics,
    write_annotations,
)

__version__ = "0.1.0"
