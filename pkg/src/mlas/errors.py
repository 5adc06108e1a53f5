"""Exception hierarchy shared across the package."""


class MlasError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(MlasError, ValueError):
    """Operands have incompatible dimensions."""


class EncodingError(MlasError, ValueError):
    """A sequence item is not part of the vocabulary."""

    def __init__(self, item):
        super().__init__(f"unknown item {item!r}")
        self.item = item


class LengthError(MlasError, ValueError):
    """A sequence does not fit into the requested padded length."""


class ParseError(MlasError, ValueError):
    """A record in an input file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(MlasError, ValueError):
    """Input file parsed but violates dataset-wide consistency rules."""


class UnknownIdError(MlasError, KeyError):
    """A feedback or partition entry references an id that does not resolve."""

    def __init__(self, message, ids=()):
        super().__init__(message)
        self.ids = tuple(ids)

    def __str__(self):
        return self.args[0]


class ConfigError(MlasError, ValueError):
    """Invalid configuration or inconsistent model wiring."""


class DivergenceError(MlasError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None, triplet=None):
        super().__init__(message)
        self.epoch = epoch
        self.triplet = triplet
