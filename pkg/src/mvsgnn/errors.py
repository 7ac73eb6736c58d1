"""Exception types shared across the package."""


class MVSError(Exception):
    pass


class IndexOutOfRange(MVSError, IndexError):
    pass


class DuplicateEntry(MVSError, ValueError):
    pass


class DuplicateId(MVSError, ValueError):
    pass


class DimensionMismatch(MVSError, ValueError):
    pass


# backward() reports shape problems under this name
ShapeMismatch = DimensionMismatch


class IsolatedNodeWithoutSelfLoop(MVSError, ValueError):
    pass


class InvalidProbability(MVSError, ValueError):
    pass


class ParseError(MVSError, ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip())


class InconsistentNodeCount(MVSError, ValueError):
    pass


class UnknownLabelClass(MVSError, ValueError):
    pass


class MissingHistory(MVSError, ValueError):
    pass


class LabelModeMismatch(MVSError, ValueError):
    pass


class BatchTooLarge(MVSError, ValueError):
    pass


class EmptyCandidateSet(MVSError, ValueError):
    pass


class EmptyBatch(MVSError, RuntimeError):
    pass


class StaleCache(MVSError, RuntimeError):
    pass


class AllZeroGradients(MVSError, ValueError):
    pass


class BudgetExceedsN(MVSError, ValueError):
    pass


class CoverageGap(MVSError, ValueError):
    pass


class RegimeViolation(MVSError, ValueError):
    pass


class NonPositiveProb(MVSError, ValueError):
    pass


class ConfigError(MVSError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
