"""
Error hierarchy for the alignment scorer.

Every error carries the process exit code the management commands use:
2 for configuration problems, 3 for data problems, 4 for numeric problems.
"""


class AlignmentScorerError(Exception):
    exit_code = 1


class ConfigError(AlignmentScorerError):
    exit_code = 2


class DataError(AlignmentScorerError):
    exit_code = 3


class NumericError(AlignmentScorerError):
    exit_code = 4


# Data family

class ManifestError(DataError):
    def __init__(self, message: str, line: int = None):
        self.line = line
        if line is not None:
            message = f'line {line}: {message}'
        super().__init__(message)


class DuplicateIdError(ManifestError):
    pass


class AugmentError(DataError):
    pass


class TeacherCoverageError(DataError):
    pass


class MissingAudioError(DataError):
    pass


class MaskParamError(DataError):
    pass


class EnsembleError(DataError):
    pass


class CheckpointError(DataError):
    pass


# Numeric family

class NonFiniteError(NumericError):
    def __init__(self, node: str, message: str = None):
        self.node = node
        super().__init__(message or f'non-finite value produced at {node}')


class ShapeError(NumericError):
    pass


class PoolError(NumericError):
    pass


class VocabError(NumericError):
    pass


class SequenceTooLongError(NumericError):
    pass


class ListError(NumericError):
    pass


class MaskError(NumericError):
    pass


class DegenerateError(NumericError):
    pass
