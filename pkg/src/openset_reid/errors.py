"""Exception hierarchy shared by every module.

All errors derive from :class:`ReidError` so callers (and the CLI) can catch
one type. The class name doubles as the machine-readable error code.
"""

from __future__ import annotations


class ReidError(Exception):
    """Base class for all package errors."""

    @property
    def code(self) -> str:
        return type(self).__name__

    def payload(self) -> dict:
        """JSON-serialisable description for the CLI error line."""
        return {"error": self.code, "message": str(self)}


# -- data / IO ---------------------------------------------------------------


class MissingFile(ReidError, FileNotFoundError):
    pass


class MalformedRow(ReidError, ValueError):
    def __init__(self, line: int, reason: str = ""):
        self.line = line
        super().__init__(f"line {line}: {reason}" if reason else f"line {line}")


class NonPositiveId(MalformedRow):
    pass


class DuplicateKey(ReidError, ValueError):
    pass


class DimensionMismatch(ReidError, ValueError):
    pass


class BadMagic(ReidError, ValueError):
    pass


class TruncatedFile(ReidError, ValueError):
    pass


class VersionUnsupported(ReidError, ValueError):
    pass


class EmptyDataset(ReidError, ValueError):
    pass


class MissingFeatures(ReidError, ValueError):
    pass


class MissingResults(ReidError, FileNotFoundError):
    pass


# -- features ------------------------------------------------------------------


class EmptyImage(ReidError, ValueError):
    pass


class OutOfRangeChannel(ReidError, ValueError):
    pass


class EvenBlockSide(ReidError, ValueError):
    pass


class WrongImageSize(ReidError, ValueError):
    pass


# -- learning --------------------------------------------------------------------


class TooFewSamples(ReidError, ValueError):
    pass


class OutDimTooLarge(ReidError, ValueError):
    pass


class NoPositivePairs(ReidError, ValueError):
    pass


class NoNegativePairs(ReidError, ValueError):
    pass


class SingularCovariance(ReidError, ValueError):
    pass


class SingleClass(ReidError, ValueError):
    pass


class NonPositiveLambda(ReidError, ValueError):
    pass


# -- protocol / evaluation -----------------------------------------------------


class NoTrainingData(ReidError, ValueError):
    pass


class NoTestData(ReidError, ValueError):
    pass


class EmptyGallery(ReidError, ValueError):
    pass


class EmptyGenuineProbeSet(ReidError, ValueError):
    pass


class EmptyImpostorProbeSet(ReidError, ValueError):
    pass


class NoOutcomes(ReidError, ValueError):
    pass


class DegenerateConfig(ReidError, ValueError):
    pass


class DecodeFailure(ReidError, ValueError):
    def __init__(self, failures: list[tuple[tuple, str]]):
        self.failures = failures
        lines = "; ".join(f"{key}: {msg}" for key, msg in failures)
        super().__init__(f"{len(failures)} image(s) could not be decoded: {lines}")

    def payload(self) -> dict:
        data = super().payload()
        data["failures"] = [{"key": list(key), "reason": msg} for key, msg in self.failures]
        return data
