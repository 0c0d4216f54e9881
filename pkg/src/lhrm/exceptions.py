"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class LHRMError(Exception):
    exit_code = 3


class ValidationError(LHRMError, ValueError):
    """Invalid argument value (coordinates, precision, popularity...)."""

    exit_code = 1


class ConfigError(LHRMError, ValueError):
    exit_code = 1


class ShapeError(LHRMError, ValueError):
    exit_code = 3


class DataError(LHRMError, ValueError):
    exit_code = 2


class LookupFailure(LHRMError, KeyError):
    """An identifier is unknown to a fitted model or table."""

    exit_code = 2

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class EvaluationError(LHRMError):
    exit_code = 2


class StageError(LHRMError):
    """Raised by the pipeline runner; wraps the failing stage's error."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 3)
