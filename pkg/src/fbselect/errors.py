class ValidationError(ValueError):
    """Input data or configuration failed a contract check."""


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CatalogError(ValidationError, KeyError):
    """Unknown function id."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""
