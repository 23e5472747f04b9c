"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: usage errors -> 1, data errors -> 2,
scorer/transport errors -> 3.
"""

from __future__ import annotations


class RankAttackError(Exception):
    """Base class for all toolkit errors."""


class UsageError(RankAttackError):
    """Bad command line or config keys."""


class DataFormatError(RankAttackError):
    """Malformed input data; message carries file/line context when known."""


class DuplicateIdError(DataFormatError):
    """An identifier that must be unique appeared twice."""


class ScorerError(RankAttackError):
    """A relevance scorer failed (protocol violation, timeout, bad score)."""


class GeneratorError(RankAttackError):
    """A text generator call failed.

    `retryable` distinguishes transient transport failures from permanent
    ones such as an empty generation.
    """

    def __init__(self, message: str, *, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable
