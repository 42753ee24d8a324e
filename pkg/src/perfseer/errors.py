"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class PerfseerError(Exception):
    exit_code = 1


class ParseError(PerfseerError):
    exit_code = 2

    def __init__(self, message: str, text: str = "", position: int | None = None,
                 expected: str | None = None):
        self.text = text
        self.position = position
        self.expected = expected
        detail = message
        if expected:
            detail += f" (expected {expected})"
        if position is not None:
            detail += f" at position {position}"
            if text:
                detail += f"\n  {text}\n  {' ' * position}^"
        super().__init__(detail)


class IRError(PerfseerError):
    exit_code = 3


class AssumptionError(IRError):
    exit_code = 4


class CountingError(PerfseerError):
    exit_code = 5


class FeatureError(PerfseerError):
    exit_code = 6


class ModelError(PerfseerError):
    exit_code = 7


class CalibrationError(ModelError):
    exit_code = 8


class GeneratorError(PerfseerError):
    exit_code = 9


class ExecutorError(PerfseerError):
    exit_code = 10
