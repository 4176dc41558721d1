"""Exception types raised by the library.

Every error derives from FluidError so callers can catch one type. The CLI
maps I/O and usage problems to exit code 2 and everything else to 1.
"""


class FluidError(Exception):
    pass


class ParseError(FluidError):
    """Malformed input table. Carries 1-based (row, col) when known."""

    def __init__(self, message, row=None, col=None):
        super().__init__(message)
        self.row = row
        self.col = col


class SizeError(FluidError):
    pass


class ParameterError(FluidError):
    pass


class ContractError(FluidError):
    pass


class NumericalError(FluidError):
    pass


class DegenerateError(FluidError):
    pass


class ProtocolError(FluidError):
    pass


class StageError(FluidError):
    """Wraps a failure inside the detection pipeline with the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
