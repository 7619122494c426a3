"""Exception hierarchy shared by every module."""


class ComDMLError(Exception):
    """Base class for all library errors."""


class MissingLink(ComDMLError):
    pass


class InvalidPlan(ComDMLError):
    pass


class InvalidModel(ComDMLError):
    pass


class OutOfRange(ComDMLError):
    pass


class NoSplits(ComDMLError):
    pass


class TooLarge(ComDMLError):
    pass


class BadK(ComDMLError):
    pass


class UnknownBaseline(ComDMLError):
    pass


class ShapeMismatch(ComDMLError):
    pass


class EmptySample(ComDMLError):
    pass


class ConfigError(ComDMLError):
    """Raised for anything wrong with an experiment config file."""


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    def __init__(self, field: str, constraint: str):
        super().__init__(f"{field}: {constraint}")
        self.field = field
        self.constraint = constraint
