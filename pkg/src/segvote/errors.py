"""Exception taxonomy shared by all segvote modules."""


class SegvoteError(Exception):
    """Base class for all errors raised by this package."""


class MalformedRecord(SegvoteError):
    """A corpus line that cannot be turned into a valid Document."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class DuplicateId(MalformedRecord):
    def __init__(self, line_no: int, doc_id: str):
        super().__init__(line_no, f"duplicate id {doc_id!r}")
        self.doc_id = doc_id


class EmptyDocument(SegvoteError):
    """Document text is empty after whitespace trimming."""


class ScorerUnavailable(SegvoteError):
    """External scorer process/connection is dead or unresponsive."""


class ScorerProtocolError(SegvoteError):
    """Peer sent something that violates the wire protocol."""


class HandshakeTimeout(ScorerUnavailable):
    """No handshake reply arrived within the configured timeout."""


class VersionMismatch(ScorerProtocolError):
    def __init__(self, ours: int, theirs):
        super().__init__(f"protocol version mismatch: ours={ours}, theirs={theirs}")
        self.ours = ours
        self.theirs = theirs


class DegenerateTraining(SegvoteError):
    """Training data contains only one class."""


class NonFiniteLoss(SegvoteError):
    """Training loss became NaN/inf; typically the learning rate is too high."""


class EmptyScores(SegvoteError):
    """A voting scheme received no segment scores."""


class WeightMismatch(SegvoteError):
    """Weighted voting received weights whose length or values are invalid."""


class ShapeMismatch(SegvoteError):
    """Model parameters and configuration disagree on tensor shapes."""


class EmptySequence(SegvoteError):
    """A POS tag sequence with no tags."""


class MissingTags(SegvoteError):
    """An input row that should carry precomputed POS tags does not."""


class EmptyEvaluation(SegvoteError):
    """No (prediction, gold) pairs to evaluate."""


class MissingGold(SegvoteError):
    def __init__(self, doc_id: str):
        super().__init__(f"no gold label for doc {doc_id!r}")
        self.doc_id = doc_id
