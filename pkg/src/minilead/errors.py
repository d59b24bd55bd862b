"""Exception types shared across the package."""


class MinileadError(Exception):
    """Base class for all package errors."""


class ContractViolation(MinileadError):
    """An operation was called with arguments violating its preconditions."""


class DomainError(MinileadError):
    """A numeric argument is outside its valid domain."""


class UnsupportedModelError(MinileadError):
    """The robot model cannot be used with the requested operation."""


class ModelFileError(MinileadError):
    """A robot model / config file failed strict parsing."""


class CalibrationError(MinileadError):
    """Servo calibration is missing or inconsistent."""


class BusError(MinileadError):
    """Servo bus communication failed."""


class StaleReadError(BusError):
    """A servo did not answer within its timeout."""

    def __init__(self, servo_id: int, message: str | None = None):
        self.servo_id = servo_id
        super().__init__(message or f"servo {servo_id} did not respond in time")


class EncodeError(MinileadError):
    """A frame or message cannot be encoded."""


class SchemaError(MinileadError):
    """JSON does not match the expected schema.

    ``path`` is a JSON-pointer to the offending element.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class AnalysisError(MinileadError):
    """A statics analysis cannot be carried out on the given model."""


class ConfigError(MinileadError):
    """Runtime configuration is missing or inconsistent."""


class SessionFileError(MinileadError):
    """A demonstration session file is unusable."""
