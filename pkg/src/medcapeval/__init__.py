"""Evaluation and post-processing toolkit for medical image captioning.

Scores concept detection (exact-match accuracy, sample-averaged P/R/F1)
and caption prediction (BLEU-1..4, ROUGE, METEOR, BERTScore aggregation),
and provides the thresholding, ensembling and repetition-removal steps
that sit between model outputs and those scores.
"""

__version__ = "0.1.0"

from .caption_metrics import (
    CaptionEvalResult,
    CaptionPairScore,
    bertscore_aggregate,
    bleu,
    evaluate_captions,
    meteor,
    rouge,
)
from .caption_text import collapse_repetitions, split_sentences, tokenize
from .concept_scoring import ConceptEvalResult, evaluate_concepts, score_concept_sets
from .core import (
    CaptionCorpus,
    ConceptAnnotationSet,
    ConceptVocabulary,
    EvalReport,
    ProbabilityMatrix,
    SampleScore,
    ThresholdConfig,
    ValidationError,
    VocabEntry,
    build_probability_matrix,
)
from .ingest import (
    FileFormatError,
    parse_captions,
    parse_concept_annotations,
    parse_probability_matrix,
    parse_token_embeddings,
    write_concept_predictions,
    write_report,
)
from .thresholding import (
    SweepResult,
    apply_threshold,
    concepts_to_text,
    ensemble_mean,
    filter_vocabulary,
    restrict_predictions,
    sweep_thresholds,
)
