"""Exception taxonomy shared across the toolkit.

Argument-shape problems raise plain ValueError; the classes below mark
failure modes that callers (and the CLI exit-code table) need to tell apart.
"""


class CompvidError(Exception):
    """Base class for errors raised by this package."""


class NumericDomainError(CompvidError):
    """Non-finite values entered a numeric kernel."""


class DegenerateVectorError(CompvidError):
    """A zero-norm vector was passed where a direction is required."""


class VocabularyError(CompvidError):
    """A token id falls outside the encoder vocabulary."""


class LayoutFormatError(CompvidError):
    """A layout or config document failed validation.

    ``path`` is a JSON-path-like locator ("subjects[0].boxes[1].bbox") so the
    offending field can be reported precisely.
    """

    def __init__(self, path, reason):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class ConfigError(CompvidError):
    """A run configuration value is out of its allowed range."""


class SamplerDivergenceError(CompvidError):
    """The latent became non-finite during sampling."""


class ArtifactError(CompvidError):
    """A required run artifact is missing or unreadable."""
