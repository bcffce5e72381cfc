"""Exception types shared across the package."""


class RoadprobeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(RoadprobeError):
    """Invalid configuration value or campaign config file."""


class DimensionMismatch(RoadprobeError):
    """Point length does not match the space dimension."""


class OutOfRange(RoadprobeError):
    """A coordinate fell outside [0, 1]."""

    def __init__(self, index: int, value: float):
        self.index = index
        self.value = value
        super().__init__(f"coordinate {index} = {value!r} outside [0, 1]")


class DegeneratePlacement(RoadprobeError):
    """Car placement collapses below the minimum renderable size."""


class NotCoprime(RoadprobeError):
    """Lattice generator is not coprime with the point count."""


class TooLarge(RoadprobeError):
    """Input exceeds the limits of an exact algorithm."""


class SingularKernel(RoadprobeError):
    """Kernel matrix could not be factorized even with escalated jitter."""


class ProtocolError(RoadprobeError):
    """Malformed detector response; carries the offending payload."""

    def __init__(self, message: str, payload: bytes | str | None = None):
        self.payload = payload
        super().__init__(message)


class RequestFailed(RoadprobeError):
    """Detector reported a per-request error; the session stays usable."""


class DetectorTimeout(RoadprobeError):
    """Detector did not answer within the configured timeout."""


class ProcessExit(RoadprobeError):
    """Detector subprocess died; carries its exit code."""

    def __init__(self, message: str, returncode: int | None = None):
        self.returncode = returncode
        super().__init__(message)


class CorruptStore(RoadprobeError):
    """Result store failed an integrity check."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"{message} (line {line})")


class SceneMismatch(RoadprobeError):
    """Report asked to overlay a store onto a different scene."""
