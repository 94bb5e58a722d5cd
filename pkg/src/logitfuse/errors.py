"""Exception hierarchy shared across the package."""


class LogitFuseError(Exception):
    """Base class for all errors raised by this package."""


class AllMaskedError(LogitFuseError):
    """Every entry of a logit vector is masked; no distribution exists."""


class VocabMismatchError(LogitFuseError):
    """Two vocabularies disagree in size or fingerprint."""


class LengthMismatchError(LogitFuseError):
    """A vector's length does not match what the operation expects."""


class ExpertCountMismatchError(LogitFuseError):
    """Operation requires a specific number of experts."""


class GridTooLargeError(LogitFuseError):
    """Joint grid search would exceed the candidate-count guard."""


class ProviderUnavailableError(LogitFuseError):
    """A logit provider could not be reached or failed to respond."""


class OutOfScriptError(LogitFuseError):
    """A scripted provider ran past the end of its script."""


class MalformedMetadataError(LogitFuseError):
    """A provider's metadata response could not be interpreted."""


class EmptyCorpusError(LogitFuseError):
    """Training corpus is empty."""


class DegenerateDistributionError(LogitFuseError):
    """All probability mass sits on masked entries; sampling is impossible."""
