"""Exception hierarchy shared by every dttf module."""


class DTTFError(Exception):
    """Base class for all library errors."""


class ShapeMismatch(DTTFError, ValueError):
    pass


class IndexOutOfRange(DTTFError, IndexError):
    pass


class DuplicateConflict(DTTFError, ValueError):
    pass


class NonFiniteValue(DTTFError, ValueError):
    pass


# kept as an alias so callers can use the name that matches build_tensor's contract
NonFiniteRating = NonFiniteValue


class ZeroDimension(DTTFError, ValueError):
    pass


class EmptyInput(DTTFError, ValueError):
    pass


class TooFewEntries(DTTFError, ValueError):
    pass


class DivergenceDetected(DTTFError, FloatingPointError):
    """The training objective became non-finite (learning rate too high)."""

    def __init__(self, iteration: int, value: float):
        super().__init__(f"objective became {value!r} at outer iteration {iteration}")
        self.iteration = iteration
        self.value = value


class ParseError(DTTFError, ValueError):
    def __init__(self, message: str, line: int | None = None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line
        self.path = path


class RowCountMismatch(DTTFError, ValueError):
    pass


class RaggedRows(ParseError):
    pass


class VersionMismatch(DTTFError, ValueError):
    pass


class CorruptChecksum(DTTFError, ValueError):
    pass


class ConfigError(DTTFError, ValueError):
    pass


class GradCheckFailed(DTTFError, AssertionError):
    def __init__(self, groups: list[str], errors: dict[str, float]):
        detail = ", ".join(f"{g}={errors[g]:.3e}" for g in groups)
        super().__init__(f"gradient check failed for {detail}")
        self.groups = groups
        self.errors = errors
