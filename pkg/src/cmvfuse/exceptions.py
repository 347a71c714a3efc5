"""Exception types shared across the package."""


class CMVFuseError(Exception):
    """Base class for package errors."""


class ValidationError(CMVFuseError, ValueError):
    """An input record or artifact violates its schema or invariants."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.message = message
        self.field = field
        self.line = line
        prefix = []
        if line is not None:
            prefix.append(f"line {line}")
        if field is not None:
            prefix.append(f"field {field!r}")
        super().__init__(f"{', '.join(prefix)}: {message}" if prefix else message)


class DatasetError(ValidationError):
    """One or more records in a corpus file failed validation."""

    def __init__(self, errors: list[ValidationError]):
        self.errors = errors
        lines = "\n".join(f"  {e}" for e in errors)
        Exception.__init__(self, f"{len(errors)} invalid record(s):\n{lines}")
        self.message = str(self)
        self.field = None
        self.line = errors[0].line if errors else None


class ConfigurationError(CMVFuseError, ValueError):
    """Shapes, dimensions or settings do not fit together."""


class NumericError(CMVFuseError, ArithmeticError):
    """A loss or gradient became non-finite."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
