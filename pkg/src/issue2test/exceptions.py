class Issue2TestException(Exception):
    """Base exception for issue2test errors."""

    def __init__(self, message: str, error_code: str | None = None, details: dict | None = None):
        self.message = message
        self.error_code = error_code or self.__class__.__name__
        self.details = details or {}
        super().__init__(self.message)

    def to_dict(self) -> dict:
        """Convert to dict for JSON response."""
        return {
            "error_code": self.error_code,
            "message": self.message,
            "details": self.details,
        }


class ConfigError(Issue2TestException):
    """Configuration error."""

    pass


class RepoIndexError(Issue2TestException):
    """Repository snapshot could not be indexed."""

    pass


class NotFoundError(Issue2TestException):
    """File or symbol not present in the index."""

    pass


class TemplateError(Issue2TestException):
    """Prompt template missing or placeholder unbound."""

    pass


class ReplayMissError(Issue2TestException):
    """Request fingerprint absent from a replay transcript."""

    pass


class BackendError(Issue2TestException):
    """Model backend failed after all attempts."""

    pass


class GenerationParseError(Issue2TestException):
    """Model output held no usable code."""

    pass


class PlacementError(Issue2TestException):
    """Generated test could not be placed in the target file."""

    pass


class EmptyPatchError(Issue2TestException):
    """Old and new texts are identical."""

    pass


class PatchApplyError(Issue2TestException):
    """Patch did not apply cleanly."""

    pass


class ExecutionError(Issue2TestException):
    """Test command could not be executed."""

    pass


class MetricError(Issue2TestException):
    """Metric inputs were invalid."""

    pass
