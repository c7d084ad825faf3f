"""Machine-generated text detection by segment-level scoring and voting."""

__version__ = "0.1.0"

from .corpus import Document, Label, load_corpus  # noqa: F401
from .ensemble import (  # noqa: F401
    Verdict,
    VotingConfig,
    VotingScheme,
    detect_document,
    vote_hard,
    vote_soft,
    vote_weighted_soft,
)
from .scoring import (  # noqa: F401
    NgramScorerModel,
    NgramTrainConfig,
    SegmentScore,
    connect_external_scorer,
    score_segment,
    train_ngram_scorer,
)
from .segmenter import Segment, SegmenterConfig, segment_text, word_count  # noqa: F401
