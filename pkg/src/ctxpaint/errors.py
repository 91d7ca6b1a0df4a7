"""Exception hierarchy shared by every ctxpaint module."""


class CtxPaintError(Exception):
    """Base class for all library errors."""


class DimensionError(CtxPaintError, ValueError):
    """Shapes or extents are incompatible."""


class ContractError(CtxPaintError, ValueError):
    """A precondition on arguments was violated."""


class NumericError(CtxPaintError, ArithmeticError):
    """A computation would produce a non-finite or ill-conditioned result."""


class FormatError(CtxPaintError, ValueError):
    """A file on disk is malformed."""


class GenerationError(CtxPaintError, RuntimeError):
    """Random generation could not satisfy its constraints."""


class TrainingError(CtxPaintError, RuntimeError):
    """Training hit a non-recoverable state (e.g. a non-finite loss)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigMismatchError(CtxPaintError, ValueError):
    """A checkpoint was loaded against an incompatible configuration."""
