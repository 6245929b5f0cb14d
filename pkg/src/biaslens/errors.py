"""Exception types raised across the toolkit."""


class BiasLensError(Exception):
    """Base class for every error raised by biaslens."""


class ParseError(BiasLensError, ValueError):
    """Malformed input; carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(BiasLensError, ValueError):
    pass


class SupportMismatchError(BiasLensError, ValueError):
    pass


class InfiniteDivergenceError(BiasLensError, ValueError):
    """A reference assigns zero probability to an observed outcome."""


class EmptyDistributionError(BiasLensError, ValueError):
    pass


class SingleCellError(BiasLensError, ValueError):
    """Disparity is undefined over fewer than two attribute cells."""


class MissingReferenceError(BiasLensError, ValueError):
    pass


class InfeasibleError(BiasLensError, ValueError):
    pass


class OutOfVocabularyError(BiasLensError, KeyError):
    def __init__(self, words):
        self.words = tuple(words)
        super().__init__("out-of-vocabulary words: " + ", ".join(self.words))

    def __str__(self):
        return self.args[0]


class DegenerateError(BiasLensError, ValueError):
    pass
