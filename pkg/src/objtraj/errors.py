"""Exception types shared across the package."""


class ObjtrajError(Exception):
    """Base class for all package-specific failures."""


class DomainError(ObjtrajError, ValueError):
    """An operation received arguments outside its documented domain."""


class ConfigurationError(ObjtrajError, RuntimeError):
    """Components were wired together in an unsupported way."""


class ArchiveError(ObjtrajError, RuntimeError):
    """A tensor archive is missing, malformed, or failed its digest check."""


class TrainingDiverged(ObjtrajError, RuntimeError):
    """A training step produced a non-finite loss.

    Carries a snapshot of the offending step for post-mortem inspection.
    """

    def __init__(self, message: str, snapshot: dict | None = None):
        super().__init__(message)
        self.snapshot = dict(snapshot or {})
