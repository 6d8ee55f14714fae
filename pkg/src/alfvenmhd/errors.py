"""Exception types shared across the package."""


class AlfvenError(Exception):
    """Base class; ``code`` is the symbolic error name."""

    code = "ERROR"


class CFLViolation(AlfvenError):
    code = "CFL_VIOLATION"


class DecompositionDrift(AlfvenError):
    code = "DECOMPOSITION_DRIFT"


class AmplitudeTooLarge(AlfvenError):
    code = "AMPLITUDE_TOO_LARGE"


class NotMonotone(AlfvenError):
    code = "NOT_MONOTONE"


class RegionEmpty(AlfvenError):
    code = "REGION_EMPTY"


class FitIllConditioned(AlfvenError):
    code = "FIT_ILL_CONDITIONED"


class ConfigParseError(AlfvenError):
    code = "PARSE_ERROR"

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class ConfigValidationError(AlfvenError):
    code = "VALIDATION_ERROR"


class SnapshotError(AlfvenError):
    code = "HEADER_MISMATCH"
