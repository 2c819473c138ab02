"""Exception hierarchy shared across the package."""


class GspError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(GspError):
    """Vector/matrix dimensions do not agree."""


class DegenerateCorpusError(GspError):
    """Embedding corpus carries no variance to decompose."""


class DegeneratePointError(GspError):
    """Reconstructed embedding collapsed to (near) zero norm."""


class DegenerateAxisError(GspError):
    """Slider axis requested along a zero-variance component."""


class ChainCompleteError(GspError):
    """No further trials can be proposed for a finished chain."""


class DuplicateResponseError(GspError):
    """Participant already answered this (chain, iteration) slot."""


class StaleTrialError(GspError):
    """Response targets an iteration that has already been sealed."""


class SpanError(GspError):
    """Slider span too narrow to cover the target distribution."""


class TransportError(GspError):
    """Remote renderer could not be reached."""


class MalformedAudioError(GspError):
    """Remote renderer returned bytes that do not decode as audio."""


class ValidationError(GspError):
    """Request payload failed validation."""


class NoWorkError(GspError):
    """No eligible trial/rating is currently available."""
