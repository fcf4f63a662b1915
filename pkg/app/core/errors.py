"""
Exception hierarchy for the editing engine.

Every error carries the process exit code the CLI reports for it:
1 for usage, parse, configuration and IO problems, 2 for invariant violations.
"""


class EngineError(Exception):
    """Base class for all engine errors"""

    exit_code: int = 1


class DimensionError(EngineError):
    pass


class ContractError(EngineError):
    pass


class ParameterError(EngineError):
    pass


class VocabularyError(EngineError):
    def __init__(self, word: str):
        super().__init__(f"Unknown word '{word}' is not in the vocabulary")
        self.word = word


class BudgetError(EngineError):
    pass


class PartitionError(EngineError):
    pass


class GeometryError(EngineError):
    pass


class EmptyMaskError(EngineError):
    pass


class SpecError(EngineError):
    pass


class TrainingError(EngineError):
    pass


class CheckpointError(EngineError):
    pass


class FormatError(EngineError):
    pass


class ConfigError(EngineError):
    pass


class UsageError(EngineError):
    pass


class UndefinedMetricError(EngineError):
    pass


class InvariantViolation(EngineError):
    exit_code = 2


class NumericError(InvariantViolation):
    pass


class ConsistencyError(InvariantViolation):
    pass
