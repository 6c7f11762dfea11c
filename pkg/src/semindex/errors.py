"""Exception hierarchy for the semindex engine."""


class SemIndexError(Exception):
    """Base class for all engine errors."""


# --- embedding store ---

class EmptyFrameList(SemIndexError):
    pass


class DimMismatch(SemIndexError):
    pass


class NonFiniteValue(SemIndexError):
    pass


class NonUnitInput(SemIndexError):
    pass


class BadMagic(SemIndexError):
    pass


class DuplicateItemId(SemIndexError):
    pass


class TruncatedFile(SemIndexError):
    pass


class IoFailure(SemIndexError):
    pass


# --- semantic tree ---

class EmptyInput(SemIndexError):
    pass


class UnknownItem(SemIndexError):
    pass


class TruncationTooDeep(SemIndexError):
    pass


class CorruptTree(SemIndexError):
    pass


# --- query corpus ---

class ParseError(SemIndexError):
    def __init__(self, message, line_no=None):
        super().__init__(message)
        self.line_no = line_no


class NoValidPairs(SemIndexError):
    pass


class InfeasibleSeparation(SemIndexError):
    pass


# --- sequence model ---

class TokenOutOfRange(SemIndexError):
    pass


class PrefixLengthMismatch(SemIndexError):
    pass


class PositionOutOfRange(SemIndexError):
    pass


class InvalidSemId(SemIndexError):
    pass


class EmptyBatch(SemIndexError):
    pass


class NonFiniteLoss(SemIndexError):
    pass


class DivergedLoss(SemIndexError):
    pass


# --- decoding / pipeline ---

class EmptyTrie(SemIndexError):
    pass


class StateMismatch(SemIndexError):
    pass


class MissingGroundTruth(SemIndexError):
    pass
