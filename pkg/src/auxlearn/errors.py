"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument is outside the domain an operation accepts."""


class ParseError(DomainError):
    """A text input could not be parsed.

    ``lineno`` is 1-based and ``None`` when the error is not tied to a line.
    """

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class RoutingError(RuntimeError):
    """Routing through a composed classifier failed at a named node."""

    def __init__(self, node, message):
        self.node = node
        super().__init__(f"node {node!r}: {message}")


class ConfigError(ValueError):
    """An experiment configuration is invalid."""
