"""Exception hierarchy shared across the package."""


class ParascanError(Exception):
    """Base class for all errors raised by parascan."""


class DefinitionError(ParascanError):
    """A scan definition file could not be parsed or is inconsistent."""


class InterpolationError(DefinitionError):
    """A %(name)s reference could not be resolved or recursed too deep."""


class RangeError(DefinitionError):
    """A parameter range directive is malformed."""


class FormulaSyntaxError(DefinitionError):
    """A formula failed to compile.

    Carries ``line`` and ``column`` (1-based line, 0-based column) of the
    offending position inside the formula text.
    """

    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class EvalError(ParascanError):
    """A formula raised during evaluation (division by zero, bad index, ...).

    Depending on which directive the formula came from, the caller maps this
    to a point exclusion (variables, bounds) or a scan abort (everything
    else).
    """


class TemplateError(ParascanError):
    """A template file is malformed or a placeholder cannot be resolved."""


class ProcessorError(ParascanError):
    """A point processor failed for one point (bad exit code, timeout, ...)."""


class NetworkError(ParascanError):
    """Manager/worker communication failed."""


class ResumeError(ParascanError):
    """Saved resume state is unusable (corrupt or incompatible)."""


class ScanAbort(ParascanError):
    """A non-recoverable error that must stop the whole scan."""
