"""Exception hierarchy shared by every stage of the pipeline."""


class KnowRareError(Exception):
    """Base class; ``stage`` is filled in by the CLI when reporting."""


class MalformedCode(KnowRareError, ValueError):
    pass


class EmptyCohort(KnowRareError):
    pass


class ParseError(KnowRareError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class SchemaError(KnowRareError):
    pass


class Infeasible(KnowRareError):
    pass


class EmptyGraph(KnowRareError):
    pass


class ZeroVector(KnowRareError, ArithmeticError):
    pass


class ShapeMismatch(KnowRareError, ValueError):
    pass


class DegenerateSequence(KnowRareError, ValueError):
    pass


class UnknownCondition(KnowRareError, KeyError):
    pass


class UndefinedMetric(KnowRareError, ArithmeticError):
    pass


class MissingDomain(KnowRareError):
    pass


class MissingFile(KnowRareError, FileNotFoundError):
    pass


class ConfigError(KnowRareError):
    pass
