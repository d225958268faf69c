"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid parameter combination or configuration document."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class SingularityError(DomainError):
    """Zero source-to-microphone distance in a near-field model."""


class WavFormatError(ValueError):
    """Unsupported or malformed WAV content."""


class NumericalFailure(RuntimeError):
    """Non-finite values appeared during an iterative solve."""

    def __init__(self, message, iteration=None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
