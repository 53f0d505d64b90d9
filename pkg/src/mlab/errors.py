"""Exception hierarchy shared by every mlab module.

``ValidationError`` subclasses map to CLI exit code 1; everything else that
derives from ``MlabError`` maps to exit code 2.
"""


class MlabError(Exception):
    """Base class for all errors raised by mlab."""


class ValidationError(MlabError):
    """Input or configuration violates a documented invariant."""


class ParseError(ValidationError):
    """A structured text or binary file could not be parsed."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class NonFiniteInput(ValidationError):
    pass


class RowCountMismatch(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class ArchitectureMismatch(ValidationError):
    pass


class AlreadyCentered(ValidationError):
    pass


class NotCentered(ValidationError):
    pass


class DegenerateActivations(MlabError):
    """Centered activations carry no variance, so CKA is undefined."""


class AllPruned(MlabError):
    pass


class DivergedTraining(MlabError):
    def __init__(self, message, stage=None):
        self.stage = stage
        if stage is not None:
            message = f"[stage {stage}] {message}"
        super().__init__(message)


class InsufficientData(MlabError):
    pass


class IoError(MlabError):
    pass
