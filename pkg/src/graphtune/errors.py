"""Exception hierarchy shared by every graphtune module."""


class GraphTuneError(Exception):
    """Base class for all library errors."""


class ParseError(GraphTuneError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(GraphTuneError, ValueError):
    pass


class UndefinedFeatureError(GraphTuneError, ValueError):
    pass


class VocabularyOverflowError(GraphTuneError, ValueError):
    pass


class EmptyGenerationError(GraphTuneError):
    pass


class GenerationBudgetError(GraphTuneError):
    pass


class EmptyManifestError(GraphTuneError, ValueError):
    pass


class ShapeError(GraphTuneError, ValueError):
    pass


class DivergenceError(GraphTuneError, ArithmeticError):
    pass


class CheckpointError(GraphTuneError):
    pass


class CheckpointIntegrityError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class ConfigError(GraphTuneError, ValueError):
    pass
