"""Exception hierarchy for the adaptation engine.

Every error carries the process exit code the CLI maps it to:
2 for bad input or usage, 3 for failures inside a computation.
"""

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_COMPUTE = 3


class RaeError(Exception):
    exit_code = EXIT_COMPUTE

    def __init__(self, message: str = "", *, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}" if message else f"line {line}"
        super().__init__(message)


# ── Input errors ──

class InvalidRating(RaeError):
    """An ordinal field fell outside 1..5."""
    exit_code = EXIT_INPUT


class UnknownDomain(RaeError):
    exit_code = EXIT_INPUT


class SchemaMismatch(RaeError):
    exit_code = EXIT_INPUT


class MissingCluster(RaeError):
    exit_code = EXIT_INPUT


class MissingReport(RaeError):
    exit_code = EXIT_INPUT


class MissingPair(RaeError):
    exit_code = EXIT_INPUT


class SpecValidationError(RaeError):
    exit_code = EXIT_INPUT


# ── Computation errors ──

class NonFiniteLinearPredictor(RaeError):
    pass


class DegenerateData(RaeError):
    pass


class InsufficientData(RaeError):
    pass


class InsufficientDraws(RaeError):
    pass


class EmptyGroup(RaeError):
    pass


class AllTies(RaeError):
    pass


class ConstantInput(RaeError):
    pass
