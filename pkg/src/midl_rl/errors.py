"""Exception types. Each carries a short machine-readable ``code``."""


class MidlError(Exception):
    code = "MIDL"

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context

    def line(self):
        """Single-line form used by the command line front end."""
        msg = " ".join(str(self).split())
        return f"{self.code}: {msg}"


class DomainError(MidlError, ValueError):
    code = "E_DOMAIN"


class DatasetError(MidlError, ValueError):
    code = "E_DATASET"


class ConfigError(MidlError, ValueError):
    code = "E_CONFIG"


class CheckpointError(MidlError, ValueError):
    code = "E_CHECKPOINT"


class NonFiniteError(MidlError, FloatingPointError):
    code = "E_NONFINITE"


class PenaltyUndefinedError(MidlError, ZeroDivisionError):
    code = "E_PENALTY"


class ConditionUnsatisfiable(MidlError, ValueError):
    code = "E_UNSATISFIABLE"


class StageError(MidlError, RuntimeError):
    code = "E_STAGE"

    def __init__(self, stage, message, **context):
        super().__init__(f"[{stage}] {message}", stage=stage, **context)
        self.stage = stage
