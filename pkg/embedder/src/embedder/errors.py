class EmbedderError(Exception):
    """Base class for embedding export failures."""


class CheckpointUnavailable(EmbedderError):
    """The model checkpoint could not be loaded."""


class TokenizationFailure(EmbedderError):
    """A document could not be tokenized."""
