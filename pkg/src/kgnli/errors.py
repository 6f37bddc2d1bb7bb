"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes do not agree."""


class DomainError(ValueError):
    """Input outside the domain an operation is defined on."""


class StateError(RuntimeError):
    """Operation called in the wrong lifecycle state."""


class VerificationError(RuntimeError):
    """A verification harness could not produce a trustworthy result."""


class ParseError(ValueError):
    """Malformed input file. Carries the 1-based line number when known."""

    def __init__(self, message, path=None, lineno=None):
        self.path = path
        self.lineno = lineno
        where = ""
        if path is not None:
            where += f"{path}:"
        if lineno is not None:
            where += f"line {lineno}: "
        elif where:
            where += " "
        super().__init__(where + message)


class ValidationError(ParseError):
    """Well-formed record with invalid content."""
