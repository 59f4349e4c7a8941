"""Exception hierarchy shared by all pipeline stages."""


class FinparseError(Exception):
    """Base class for all pipeline errors."""


class IngestionError(FinparseError):
    """A source file could not be read or decoded."""


class EmptyDocumentError(IngestionError):
    """A document source yielded zero pages."""


class ConfigError(FinparseError):
    """Invalid or incomplete pipeline configuration."""


class TransportError(FinparseError):
    """A backend was unreachable or timed out; the call may be retried."""


class ProtocolError(FinparseError):
    """A backend returned a malformed or invariant-violating response."""


class IndexError_(FinparseError):
    """Inconsistent input while building a retrieval index."""


class NormalizationError(FinparseError):
    """A raw extracted value could not be normalized."""


class EvalInputError(FinparseError):
    """Evaluation inputs are empty, duplicated, or misaligned."""


class LookupError_(FinparseError):
    """A requested document or field does not exist in the results."""
