"""Exception hierarchy shared across the package."""


class GaitEmotionError(Exception):
    """Base class for all package errors."""


class MappingError(GaitEmotionError, KeyError):
    """A canonical joint has no source joint assigned to it."""

    def __str__(self):
        return Exception.__str__(self)


class ParseError(GaitEmotionError, ValueError):
    """A dataset record could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(GaitEmotionError, ValueError):
    """A record parsed but violates the sample schema."""


class EmptyGaitError(GaitEmotionError, ValueError):
    pass


class SplitError(GaitEmotionError, ValueError):
    pass


class EmptyError(GaitEmotionError, ValueError):
    """An operation needs at least one (labeled) item."""


class DegenerateQuatError(GaitEmotionError, ValueError):
    pass


class UndefinedAPError(GaitEmotionError, ValueError):
    """Average precision is undefined without relevant items."""


class ShapeError(GaitEmotionError, ValueError):
    pass


class DivergenceError(GaitEmotionError, RuntimeError):
    def __init__(self, epoch, step, value):
        self.epoch = epoch
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, step {step}")


class ConfigError(GaitEmotionError, ValueError):
    pass
