"""Exception hierarchy shared across the package."""


class CotRewardError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(CotRewardError, ValueError):
    pass


class NotFoundError(CotRewardError, KeyError):
    def __str__(self):
        # KeyError quotes its message; keep it readable.
        return str(self.args[0]) if self.args else ""


class ParseError(CotRewardError):
    """Raised when free-text model output cannot be parsed.

    Attributes:
        raw: The unparsed response text.
    """

    def __init__(self, message, raw=""):
        super().__init__(message)
        self.raw = raw


class TransportError(CotRewardError):
    pass


class NumericError(CotRewardError, ArithmeticError):
    pass


class AbortRunError(CotRewardError):
    """A training run hit a non-finite loss; `diagnostics` holds the context."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
