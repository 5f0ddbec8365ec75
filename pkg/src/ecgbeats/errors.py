"""Exception types shared across the package."""


class DataError(Exception):
    """Raised when input files or directories are missing or malformed."""


class ParseError(DataError):
    """Malformed header, signal, or annotation content.

    Carries enough context (line number or byte offset) to locate the
    problem in the source file.
    """

    def __init__(self, message, *, line=None, offset=None):
        ctx = []
        if line is not None:
            ctx.append(f"line {line}")
        if offset is not None:
            ctx.append(f"byte offset {offset}")
        if ctx:
            message = f"{message} ({', '.join(ctx)})"
        super().__init__(message)
        self.line = line
        self.offset = offset


class NumericError(Exception):
    """Raised when a numeric procedure fails (singular matrix, divergence)."""
