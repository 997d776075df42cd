class ExtractorError(Exception):
    """Model loading, tokenization, or extraction failed."""


class NoGradParams(ExtractorError):
    """The selected gradient source matches no parameters on this model."""
