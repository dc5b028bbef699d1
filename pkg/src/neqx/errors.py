"""Exception types shared across the package."""


class NeqxError(Exception):
    """Base class for all errors raised by neqx."""


class ConfigurationError(NeqxError, ValueError):
    """Invalid parameters or configuration keys."""


class DomainError(NeqxError, ValueError):
    """Input outside the domain of an operation (bad dimension, index out of range, ...)."""


class FormatError(NeqxError, ValueError):
    """A file does not follow the expected binary layout."""


class TruncatedFileError(NeqxError, OSError):
    """A file ended in the middle of a record."""


class IntegrityError(FormatError):
    """Checksum mismatch on an index file."""


class VersionError(FormatError):
    """Index file written by an unsupported format version."""
